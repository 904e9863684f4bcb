"""Numerical checks of the structural target conditions and the disk example.

Every checker is sampling based: a pass means no counterexample was found
among the sampled configurations, not a proof.  Reports always carry the
worst sample seen so failures come with a witness.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import TOL
from .errors import (
    ComplexRoot,
    DomainError,
    InvalidParameters,
    QuadratureBudgetExceeded,
    VisibilityFailure,
)
from .geom_core import refraction_margin
from .scene import Cap, CurvedDisk, Density, DiscretePoints, PlanarDisk, Scene, nearest_point
from .sphere_curves import SphericalSegment, curve_point

_dot = lambda a, b: np.einsum("...i,...i->...", a, b)  # noqa: E731
_unit = lambda a: a / np.linalg.norm(a, axis=-1, keepdims=True)  # noqa: E731


@dataclass
class SubReport:
    name: str
    passes: bool
    samples: int = 0
    constants: dict = field(default_factory=dict)
    witness: dict | None = None
    notes: str = ""

    def to_dict(self):
        return {
            "name": self.name,
            "passes": bool(self.passes),
            "samples": int(self.samples),
            "constants": {k: _plain(v) for k, v in self.constants.items()},
            "witness": _plain(self.witness),
            "notes": self.notes,
        }


@dataclass
class HypothesisReport:
    parts: dict

    @property
    def passes(self):
        return all(p.passes for p in self.parts.values())

    def to_dict(self):
        return {"passes": self.passes, "checks": {k: v.to_dict() for k, v in self.parts.items()}}


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    return v


# ------------------------------------------------------------- constants


def C_of_kappa(kappa):
    """Separation constant: H.B asks ``|X| / |Y - X| <= C(kappa)``."""
    return kappa * (math.sqrt(1.0 + (1.0 + kappa) ** -2) - 1.0)


def tau_constants(tau, kappa):
    """``(C_tk, Chat_tk)``: ``|Y| >= C_tk |X|`` plus ``x.y >= kappa + tau`` imply the
    refraction condition and ``|X|/|Y - X| <= Chat_tk``."""
    if not 0.0 < tau < 1.0 - kappa:
        raise DomainError("tau must lie in (0, 1 - kappa)")
    q = math.sqrt(1.0 - kappa * kappa)
    den = (kappa + tau) * q - kappa * math.sqrt(1.0 - (kappa + tau) ** 2)
    if den <= 0.0:
        raise DomainError("C_{tau,kappa} is undefined for these parameters")
    C = q / den
    return C, 1.0 / (C - 1.0)


# ------------------------------------------------------------ H.A ... H.D


def _target_samples(target, rng, size):
    if isinstance(target, DiscretePoints):
        return target.points
    return np.vstack([target.rim(), target.sample_uniform(rng, size)])


def check_HA(scene: Scene, samples=10_000, seed=0, n_lambda=21):
    rng = np.random.default_rng([seed, 1])
    target = scene.target
    X = scene.sample_shell(rng, samples)
    Y = _target_samples(target, rng, samples)
    parts = {}

    # (a) every pair refracts: the worst X for each sampled Y and vice versa
    iy = rng.integers(0, len(Y), len(X))
    margins = refraction_margin(X, Y[iy], scene.kappa)
    ext = X[: 2 * (1 + len(scene.omega.rim()))]
    grid = refraction_margin(ext[:, None, :], Y[None, :, :], scene.kappa)
    worst_a = min(float(margins.min()), float(grid.min()))
    if worst_a == float(margins.min()):
        k = int(margins.argmin())
        wit = {"X": X[k], "Y": Y[iy[k]], "margin": worst_a}
    else:
        i, j = np.unravel_index(grid.argmin(), grid.shape)
        wit = {"X": ext[i], "Y": Y[j], "margin": worst_a}
    pa = worst_a >= -TOL.hc_margin
    parts["a"] = SubReport("H.A(a)", pa, len(X) + grid.size, {"min_refraction_margin": worst_a},
                           None if pa else wit)

    # (b) the x0-curves between visible directions stay visible
    n_seg = max(1, min(samples // 20, 500))
    lam = np.linspace(0.0, 1.0, n_lambda)
    fails, wit_b = 0, None
    single = isinstance(target, DiscretePoints) and target.size == 1
    if not single:
        for _ in range(n_seg):
            X0 = scene.sample_shell(rng, 1, extremes=False)[0]
            Yb, Yh = Y[rng.integers(0, len(Y), 2)]
            if np.allclose(Yb, Yh):
                continue
            x0 = _unit(X0)
            try:
                seg = SphericalSegment(x0, _unit(Yb - X0), _unit(Yh - X0), scene.kappa)
                m, _, _ = curve_point(lam, seg)
            except (DomainError, ComplexRoot):
                continue  # endpoints not visible is an (a) failure, reported there
            s = target.hit(X0, m)
            if np.any(np.isnan(s)):
                fails += 1
                if wit_b is None:
                    wit_b = {"X0": X0, "Y_bar": Yb, "Y_hat": Yh, "lambda": float(lam[np.isnan(s).argmax()])}
    parts["b"] = SubReport("H.A(b)", fails == 0, 0 if single else n_seg, {"invisible_curves": fails}, wit_b,
                           "single point target" if single else "")

    # (c) uniform Lipschitz bound of s_X over sampled direction pairs
    sup_lip = 0.0
    n_pairs = max(1, samples // 10)
    X0s = scene.sample_shell(rng, n_pairs, extremes=False)
    Y1 = Y[rng.integers(0, len(Y), n_pairs)]
    Y2 = Y[rng.integers(0, len(Y), n_pairs)]
    if not isinstance(target, DiscretePoints):
        # nearby pairs probe the local constant as well
        h = n_pairs // 2
        jitter = 1e-3 * target.diameter * rng.normal(size=(h, scene.n))
        Y2[:h] = nearest_point(target, Y1[:h] + jitter)
    m1, m2 = _unit(Y1 - X0s), _unit(Y2 - X0s)
    dm = np.linalg.norm(m1 - m2, axis=-1)
    ds = np.abs(np.linalg.norm(Y1 - X0s, axis=-1) - np.linalg.norm(Y2 - X0s, axis=-1))
    ok = dm > 1e-12
    if np.any(ok):
        sup_lip = float(np.max(ds[ok] / dm[ok]))
    parts["c"] = SubReport("H.A(c)", bool(np.isfinite(sup_lip)), int(ok.sum()), {"C_lip": sup_lip})
    return parts


def hb_ratio_sup(scene: Scene, samples=10_000, seed=0):
    """``sup |X| / |Y - X|`` over sampled shell points, using the nearest target point."""
    rng = np.random.default_rng([seed, 2])
    X = scene.sample_shell(rng, samples)
    Y = nearest_point(scene.target, X)
    r = np.linalg.norm(X, axis=-1) / np.linalg.norm(Y - X, axis=-1)
    k = int(r.argmax())
    return float(r[k]), X[k], Y[k]


def check_HB(scene: Scene, samples=10_000, seed=0):
    ck = C_of_kappa(scene.kappa)
    sup, Xw, Yw = hb_ratio_sup(scene, samples, seed)
    passes = sup <= ck * (1.0 + 1e-12)
    # consequences: s_X >= c1 / C(kappa) and the m-vs-Y Lipschitz relation
    rng = np.random.default_rng([seed, 3])
    n_pairs = max(1, samples // 10)
    X = scene.sample_shell(rng, n_pairs, extremes=False)
    Ys = _target_samples(scene.target, rng, n_pairs)
    Yb = Ys[rng.integers(0, len(Ys), n_pairs)]
    Yh = Ys[rng.integers(0, len(Ys), n_pairs)]
    db, dh = np.linalg.norm(Yb - X, axis=-1), np.linalg.norm(Yh - X, axis=-1)
    s_min = float(np.min(np.linalg.norm(nearest_point(scene.target, X) - X, axis=-1)))
    dm = np.linalg.norm((Yb - X) / db[:, None] - (Yh - X) / dh[:, None], axis=-1)
    bound = 2.0 * np.minimum(1.0 / db, 1.0 / dh) * np.linalg.norm(Yb - Yh, axis=-1)
    consts = {
        "sup_ratio": sup,
        "C_kappa": ck,
        "min_s": s_min,
        "s_lower_bound": scene.c1 / ck,
        "max_m_excess": float(np.max(dm - bound)),
    }
    return SubReport("H.B", passes, samples, consts, None if passes else {"X": Xw, "Y": Yw, "ratio": sup})


def hc_margins(scene: Scene, X0, Y_bar, Y_hat, lam, mu=0.0):
    """``LHS - RHS`` of the concavity condition along one curve; NaN where not visible."""
    surf = scene.target.surface_for_curves()
    x0 = _unit(X0)
    seg = SphericalSegment(x0, _unit(Y_bar - X0), _unit(Y_hat - X0), scene.kappa)
    m, bb, bh = curve_point(lam, seg)
    r0 = np.linalg.norm(X0)
    s = surf.hit(X0, m)
    sb, sh = np.linalg.norm(Y_bar - X0), np.linalg.norm(Y_hat - X0)
    lhs = 1.0 / s + mu / r0
    rhs = bb * (1.0 / sb + mu / r0) + bh * (1.0 / sh + mu / r0)
    return lhs - rhs


def check_HC(scene: Scene, samples=10_000, seed=0, mu=0.0, n_lambda=21):
    if not 0.0 <= mu < scene.kappa:
        raise DomainError("mu must lie in [0, kappa)")
    rng = np.random.default_rng([seed, 4])
    try:
        surf = scene.target.surface_for_curves()
    except VisibilityFailure:
        return SubReport("H.C", False, 0, {}, None, "target has no surface to evaluate s_X along curves")
    lam = np.linspace(0.0, 1.0, n_lambda)
    n_curves = max(1, samples // n_lambda)
    worst, wit, skipped = np.inf, None, 0
    Ys = _target_samples(surf, rng, 2 * n_curves)
    for _ in range(n_curves):
        X0 = scene.sample_shell(rng, 1, extremes=False)[0]
        Yb, Yh = Ys[rng.integers(0, len(Ys), 2)]
        try:
            d = hc_margins(scene, X0, Yb, Yh, lam, mu)
        except (DomainError, ComplexRoot):
            skipped += 1
            continue
        if np.all(np.isnan(d)):
            skipped += 1
            continue
        k = int(np.nanargmin(d))
        if d[k] < worst:
            worst = float(d[k])
            wit = {"X0": X0, "Y_bar": Yb, "Y_hat": Yh, "lambda": float(lam[k]), "margin": worst}
    passes = worst >= -TOL.hc_margin
    return SubReport("H.C", passes, n_curves * n_lambda, {"min_margin": worst, "mu": mu, "skipped": skipped},
                     None if passes else wit)


# ------------------------------------------------------------ tube measure


def _dist_to_polyline(P, C):
    """Distance from points ``P`` (k, d) to the polyline through ``C`` (m, d)."""
    A, B = C[:-1], C[1:]
    AB = B - A
    L2 = np.maximum(_dot(AB, AB), 1e-300)
    best = np.full(len(P), np.inf)
    for i in range(len(A)):  # short loop over segments keeps memory flat
        t = np.clip(((P - A[i]) @ AB[i]) / L2[i], 0.0, 1.0)
        q = A[i] + t[:, None] * AB[i]
        best = np.minimum(best, np.linalg.norm(P - q, axis=-1))
    return best


def tube_measure(curve, mu, target, rng=None, n_mc=4000, rel_tol=None, max_mc=256_000):
    """Estimate ``H^{n-1}(N_mu(curve) ∩ Sigma)`` for a polyline ``curve`` lying on the target.

    n = 2 planar targets use the exact interval length.  n = 3 planar disks
    use Monte Carlo in a box aligned with the chord of the curve; other
    surfaces sample the target uniformly.  Returns ``(estimate, stderr)``.
    With ``rel_tol`` the sample count doubles until the relative standard
    error drops below it, raising QuadratureBudgetExceeded past ``max_mc``.
    """
    curve = np.asarray(curve, float)
    rng = rng or np.random.default_rng(0)
    n = curve.shape[1]
    if n == 2 and isinstance(target, PlanarDisk):
        a, b = curve[:, 0].min(), curve[:, 0].max()
        return float(min(b + mu, target.R) - max(a - mu, -target.R)), 0.0
    size = n_mc
    while True:
        if isinstance(target, PlanarDisk):
            p = curve[:, :-1]
            chord = p[-1] - p[0]
            u = chord / np.linalg.norm(chord) if np.linalg.norm(chord) > 0 else np.array([1.0, 0.0])
            w = np.array([-u[1], u[0]])
            cu, cw = p @ u, p @ w
            lo_u, hi_u, lo_w, hi_w = cu.min() - mu, cu.max() + mu, cw.min() - mu, cw.max() + mu
            box = (hi_u - lo_u) * (hi_w - lo_w)
            q = rng.uniform(lo_u, hi_u, size)[:, None] * u + rng.uniform(lo_w, hi_w, size)[:, None] * w
            inside = (np.linalg.norm(q, axis=-1) <= target.R) & (_dist_to_polyline(q, p) <= mu)
        else:
            box = target.area()
            q = target.sample_uniform(rng, size)
            inside = _dist_to_polyline(q, curve) <= mu
        frac = inside.mean()
        est = box * frac
        err = box * math.sqrt(max(frac * (1.0 - frac), 1e-300) / size)
        if rel_tol is None or (est > 0 and err <= rel_tol * est):
            return float(est), float(err)
        size *= 2
        if size > max_mc:
            raise QuadratureBudgetExceeded(f"tube measure relative error {err / max(est, 1e-300):.3g} > {rel_tol}")


def _curve_curvature(C):
    d1 = np.diff(C, axis=0)
    L = np.linalg.norm(d1, axis=-1)
    t = d1 / np.maximum(L, 1e-300)[:, None]
    turn = np.linalg.norm(np.diff(t, axis=0), axis=-1)
    return float(np.max(turn / np.maximum(0.5 * (L[:-1] + L[1:]), 1e-300))) if len(turn) else 0.0


def sample_target_curves(scene: Scene, count, rng, n_points=65, min_separation=0.0):
    """Sub-curves ``lambda in [1/4, 3/4]`` of ``[Y_bar, Y_hat]_{X0}`` for sampled data."""
    surf = scene.target.surface_for_curves()
    lam = np.linspace(0.25, 0.75, n_points)
    out = []
    tries = 0
    while len(out) < count and tries < 20 * count:
        tries += 1
        X0 = scene.sample_shell(rng, 1, extremes=False)[0]
        Yb, Yh = surf.sample_uniform(rng, 2)
        sep = np.linalg.norm(Yb - Yh)
        if sep <= min_separation:
            continue
        seg = SphericalSegment(_unit(X0), _unit(Yb - X0), _unit(Yh - X0), scene.kappa)
        m, _, _ = curve_point(lam, seg)
        s = surf.hit(X0, m)
        if np.any(np.isnan(s)):
            continue
        out.append((X0, Yb, Yh, X0 + s[:, None] * m))
    return out


def default_mu0(scene: Scene, curves):
    surf = scene.target.surface_for_curves()
    kmax = max((_curve_curvature(c[3]) for c in curves), default=0.0)
    mu0 = 0.05 * surf.diameter
    return mu0 if kmax == 0.0 else min(mu0, 0.5 / kmax)


def check_HD(scene: Scene, mu0=None, samples=200, seed=0, n_mc=4000, mu_steps=3, max_drift=2.0):
    """Lower bound ``H^{n-1}(N_mu(curve) ∩ Sigma) >= C mu^{n-2} |Y_bar - Y_hat|``.

    For ``mu = mu0, mu0/2, ...`` the infimum of the ratio over sampled curves is
    recorded; the check passes when every infimum is positive and their
    spread (max / min) stays below ``max_drift``.
    """
    rng = np.random.default_rng([seed, 5])
    try:
        surf = scene.target.surface_for_curves()
    except VisibilityFailure:
        return SubReport("H.D", False, 0, {}, None, "target has no surface for tube measures")
    curves = sample_target_curves(scene, samples, rng, min_separation=1e-3 * surf.diameter)
    if mu0 is None:
        mu0 = default_mu0(scene, curves)
    mus = [mu0 / 2**k for k in range(mu_steps)]
    infs, wit = [], None
    for mu in mus:
        worst = np.inf
        for X0, Yb, Yh, C in curves:
            meas, _ = tube_measure(C, mu, surf, rng, n_mc=n_mc)
            ratio = meas / (mu ** (scene.n - 2) * np.linalg.norm(Yb - Yh))
            if ratio < worst:
                worst = ratio
                wit = {"X0": X0, "Y_bar": Yb, "Y_hat": Yh, "mu": mu, "ratio": ratio}
        infs.append(float(worst))
    spread = max(infs) / min(infs) if min(infs) > 0 else np.inf
    passes = min(infs) > 0 and spread <= max_drift
    return SubReport("H.D", passes, len(curves) * len(mus),
                     {"mu0": mu0, "mus": mus, "C_HD": min(infs), "inf_ratio_per_mu": infs, "spread": spread},
                     None if passes else wit)


def check_H1H2(scene: Scene, tau, samples=10_000, seed=0):
    """Sufficient conditions through ``tau``: ``x.Y >= (kappa + tau)|Y|`` and ``|Y| >= C_tk |X|``."""
    C_tk, Chat = tau_constants(tau, scene.kappa)
    rng = np.random.default_rng([seed, 6])
    x = np.vstack([scene.omega.axis, scene.omega.rim(), scene.omega.sample_uniform(rng, samples)])
    Y = _target_samples(scene.target, rng, samples)
    iy = rng.integers(0, len(Y), len(x))
    h1 = _dot(x, Y[iy]) - (scene.kappa + tau) * np.linalg.norm(Y[iy], axis=-1)
    # cap rim against target rim: where the smallest angles occur for disks
    xr = np.vstack([scene.omega.axis, scene.omega.rim()])
    Yr = np.asarray(scene.target.rim())
    h1_rim = _dot(xr[:, None, :], Yr[None, :, :]) - (scene.kappa + tau) * np.linalg.norm(Yr, axis=-1)
    h1_min = float(min(h1.min(), h1_rim.min()))
    ynorm_min = float(np.linalg.norm(nearest_point(scene.target, np.zeros(scene.n))))
    # H.2 is informational: rays meet a plane or point set at most once unless points are collinear
    r0_bound = tau / (1.0 + scene.kappa) * ynorm_min
    h1_ok = h1_min >= -TOL.hc_margin
    radial_ok = ynorm_min >= C_tk * scene.c2
    return SubReport("H.1/H.2", h1_ok and radial_ok, len(x),
                     {"C_tau_kappa": C_tk, "Chat_tau_kappa": Chat, "min_H1_margin": h1_min,
                      "min_target_norm": ynorm_min, "required_norm": C_tk * scene.c2, "r0_bound": r0_bound},
                     None, "H.2 single-intersection property is informational")


def check_all(scene: Scene, samples=10_000, seed=0, mu=0.0, hd_samples=200):
    parts = check_HA(scene, samples, seed)
    parts = {f"HA_{k}": v for k, v in parts.items()}
    parts["HB"] = check_HB(scene, samples, seed)
    parts["HC"] = check_HC(scene, samples, seed, mu)
    parts["HD"] = check_HD(scene, samples=hd_samples, seed=seed)
    return HypothesisReport(parts)


# ------------------------------------------------------------ disk example


@dataclass(frozen=True)
class ExampleGeometry:
    kappa: float
    c2: float
    C: float
    R_fraction: float
    theta: float
    Y0: float       # height of the apex of the cone E
    M: float
    R: float
    omega_half_angle: float


def example_geometry(kappa, c2, C, R_fraction=1.0):
    if not 0.0 < kappa < 1.0 or c2 <= 1.0 or C <= 0.0 or not 0.0 < R_fraction <= 1.0:
        raise InvalidParameters("need 0<kappa<1, c2>1, C>0, 0<R_fraction<=1")
    theta = math.acos(kappa)
    M = C + 2.0 * c2 * math.sqrt((1.0 + kappa) / 2.0)
    R = R_fraction * math.sqrt((1.0 - kappa) / (1.0 + kappa)) * C
    return ExampleGeometry(kappa, c2, C, R_fraction, theta, 2.0 * c2 * math.cos(theta / 2.0), M, R,
                           math.atan(R / M))


def cone_E_contains(Y, kappa, c2, tol=0.0):
    """Membership in the cone with apex ``Y0 = 2 c2 cos(theta/2) e_n``, axis ``e_n``, half-angle ``theta/2``."""
    Y = np.asarray(Y, float)
    half = math.acos(kappa) / 2.0
    d = Y.copy()
    d[..., -1] -= 2.0 * c2 * math.cos(half)
    return d[..., -1] / np.linalg.norm(d, axis=-1) >= math.cos(half) - tol


def _hb_sup_disk(kappa, c2, C, R_fraction):
    """Exact ``sup |X|/dist(X, Sigma)`` for the example: the worst point has ``|X| = c2``
    and the ratio then only depends on the polar angle of ``X``."""
    g = example_geometry(kappa, c2, C, R_fraction)
    a = np.linspace(0.0, g.omega_half_angle, 2001)
    rad = c2 * np.sin(a)
    dist = np.hypot(np.maximum(rad - g.R, 0.0), g.M - c2 * np.cos(a))
    return float(np.max(c2 / dist))


def minimal_C_for_HB(kappa, c2, R_fraction=1.0, rtol=1e-13):
    """Smallest ``C`` for which the example satisfies H.B, by bisection.

    The returned value is the upper end of the final bracket, so H.B holds at it.
    """
    ck = C_of_kappa(kappa)
    g = lambda C: _hb_sup_disk(kappa, c2, C, R_fraction) - ck  # noqa: E731
    lo, hi = 1e-6, 1.0
    while g(hi) > 0:
        lo, hi = hi, 2.0 * hi
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if g(mid) <= 0 else (mid, hi)
    return hi


def build_example_scene(kappa=0.5, c2=2.0, C=None, R_fraction=1.0, n=3, density=None, seed=0):
    """Disk target over a vertical cap; with ``C=None`` the H.B-minimal ``C`` is used."""
    if n not in (2, 3):
        raise InvalidParameters("n must be 2 or 3")
    if C is None:
        C = minimal_C_for_HB(kappa, c2, R_fraction)
    g = example_geometry(kappa, c2, C, R_fraction)
    axis = np.zeros(n)
    axis[-1] = 1.0
    return Scene(n=n, kappa=kappa, c1=1.0, c2=c2, omega=Cap(axis, g.omega_half_angle),
                 density=density or Density(), target=PlanarDisk(g.R, g.M, n), seed=seed)


def bent_disk_scene(scene: Scene, curvature):
    """Same scene with the disk replaced by a spherical piece of the given curvature."""
    t = scene.target.surface_for_curves()
    return scene.with_target(CurvedDisk(t.R, t.M, curvature, scene.n))
