"""Randomised verification of the oval estimates and Hölder diagnostics for refractors.

Each lemma suite samples the quantifiers of one inequality, evaluates both
sides and records violations (exact inequalities) or the empirical value of
the constant the inequality asserts to exist.  Existential constants are
judged by stability: the constant estimated with ``samples`` and with
``4 * samples`` draws must agree to within ``TOL.stability_drift``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy.spatial import cKDTree

from .config import TOL
from .errors import DomainError, HypothesisNotSatisfied, InvalidParameters
from .geom_core import (
    bc_scalars,
    discriminant,
    f_BC,
    grad_h_x,
    h_value,
    slack_update,
    support_b,
)
from .hypotheses import _plain, check_HA, check_HB, check_HC
from .refractor_solver import DiscreteRefractor
from .scene import DiscretePoints, Scene, nearest_point
from .sphere_curves import SphericalSegment, curve_point

_dot = lambda a, b: np.einsum("...i,...i->...", a, b)  # noqa: E731


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


@dataclass
class LemmaReport:
    lemma_id: str
    kind: str                       # "exact", "existential" or "mixed"
    samples_tested: int
    violations: int = 0
    worst_margin: float | None = None
    empirical_constant: float | None = None
    constant_name: str = ""
    stability_flag: bool | None = None
    drift: float | None = None
    constants: dict = field(default_factory=dict)
    hypotheses: list = field(default_factory=list)
    seed: int = 0

    @property
    def passes(self):
        if self.violations:
            return False
        if self.kind != "exact":
            c = self.empirical_constant
            return c is not None and math.isfinite(c) and bool(self.stability_flag)
        return True

    def to_dict(self):
        return _plain({
            "lemma_id": self.lemma_id,
            "kind": self.kind,
            "passes": self.passes,
            "samples_tested": int(self.samples_tested),
            "violations": {"count": int(self.violations), "worst_margin": self.worst_margin},
            "empirical_constant": self.empirical_constant,
            "constant_name": self.constant_name,
            "stability_flag": self.stability_flag,
            "drift": self.drift,
            "constants": self.constants,
            "hypotheses": list(self.hypotheses),
            "seed": int(self.seed),
        })


# ------------------------------------------------------------- hypotheses


REQUIRED = {
    "3.1": ("HA", "HB"), "3.2": (), "3.3": (), "3.4": ("HA", "HB", "HC"),
    "4.1": (), "4.2": (), "4.3": ("HA", "HB"), "4.4": (), "4.5": ("HA", "HB"),
    "5.1": ("HA", "HB", "HC"), "5.2": ("HA", "HB", "HC"),
}


@lru_cache(maxsize=32)
def _gate_cached(scene_json, names, samples, seed):
    scene = Scene.from_json(scene_json)
    out = {}
    if "HA" in names:
        out["HA"] = all(p.passes for p in check_HA(scene, samples, seed).values())
    if "HB" in names:
        out["HB"] = check_HB(scene, samples, seed).passes
    if "HC" in names:
        out["HC"] = check_HC(scene, samples, seed).passes
    return tuple(sorted(out.items()))


def require_hypotheses(scene: Scene, names, samples=2000, seed=0):
    """Raise ``HypothesisNotSatisfied`` unless every named hypothesis passes on ``scene``."""
    if not names:
        return
    res = dict(_gate_cached(scene.to_json(), tuple(sorted(names)), samples, seed))
    failed = [k for k, ok in res.items() if not ok]
    if failed:
        raise HypothesisNotSatisfied(f"scene fails {', '.join(failed)}")


def _continuous(scene: Scene):
    """The scene with its surface target (discrete targets are replaced by their surface)."""
    if isinstance(scene.target, DiscretePoints):
        return scene.with_target(scene.target.surface_for_curves())
    return scene


# --------------------------------------------------------------- sampling


def _shell(scene, rng, size):
    X = scene.sample_shell(rng, size)
    return X[:size] if len(X) >= size else X


def _targets(scene, rng, size):
    t = scene.target
    if isinstance(t, DiscretePoints):
        return t.points[rng.integers(0, t.size, size)]
    rim = t.rim()
    Y = t.sample_uniform(rng, size)
    k = min(len(rim), size // 8)
    Y[:k] = rim[:k]
    return Y


def _sphere_dirs(rng, x0, n_dim):
    """Half uniform on the sphere, half at log-uniform distances from ``x0``."""
    size = len(x0)
    x = rng.normal(size=(size, n_dim))
    x = _unit(x)
    near = np.arange(size) % 2 == 1
    k = int(near.sum())
    v = rng.normal(size=(k, n_dim))
    v -= _dot(v, x0[near])[:, None] * x0[near]
    v = _unit(v)
    ang = 10.0 ** rng.uniform(-3.0, 0.0, k)
    x[near] = np.cos(ang)[:, None] * x0[near] + np.sin(ang)[:, None] * v
    return x


def _pair_targets(scene, rng, Y):
    """Second target point: half independent, half a near neighbour of ``Y``."""
    size = len(Y)
    Y2 = _targets(scene, rng, size)
    if not isinstance(scene.target, DiscretePoints):
        half = size // 2
        jit = scene.target.diameter * 10.0 ** rng.uniform(-4.0, -1.0, half)[:, None] * rng.normal(size=(half, scene.n))
        Y2[:half] = nearest_point(scene.target, Y[:half] + jit)
    return Y2



# ---------------------------------------------------------- configurations
# A configuration batch is a dict of equally long arrays.  KINDS says how the
# local search may move each entry; evaluators return NaN where a moved
# configuration leaves the admissible set.

KINDS = {"X0": "shell", "Y": "target", "Yb": "target", "Yh": "target", "x": "sphere", "lam": "interval",
         "t": "log", "xb": "ball", "xh": "ball", "xc": "cap"}


def _rotate(x, amount, rng):
    v = rng.normal(size=x.shape)
    v -= _dot(v, x)[:, None] * x
    return _unit(x + amount[:, None] * v)


def _perturb(cfg, scene, rng, step, ctx):
    out = {}
    om = scene.omega
    for key, v in cfg.items():
        kind = KINDS.get(key)
        if kind == "shell":
            r = np.linalg.norm(v, axis=-1)
            d = v / r[:, None]
            r = np.clip(r + step * (scene.c2 - scene.c1) * rng.normal(size=len(r)), scene.c1, scene.c2)
            d2 = _rotate(d, step * om.half_angle, rng)
            d = np.where(om.contains(d2)[:, None], d2, d)
            out[key] = r[:, None] * d
        elif kind == "target":
            tgt = scene.target
            out[key] = nearest_point(tgt, v + step[:, None] * tgt.diameter * rng.normal(size=v.shape))
        elif kind == "sphere":
            out[key] = _rotate(v, step, rng)
        elif kind == "cap":
            d2 = _rotate(v, step * om.half_angle, rng)
            out[key] = np.where(om.contains(d2)[:, None], d2, v)
        elif kind == "ball":
            d2 = _rotate(v, step * ctx["delta"], rng)
            inside = np.linalg.norm(d2 - om.axis, axis=-1) <= ctx["delta"]
            out[key] = np.where(inside[:, None], d2, v)
        elif kind == "interval":
            out[key] = np.clip(v + step * rng.normal(size=len(v)), ctx.get("lam_lo", 0.0), ctx.get("lam_hi", 1.0))
        elif kind == "log":
            out[key] = v * np.exp(2.0 * step * rng.normal(size=len(v)))
        else:
            out[key] = v
    return out


def local_search(evaluate, cfg, scene, rng, sense, ctx, keep=16, iters=150, project=None):
    """Adaptive random search from the ``keep`` most extreme configurations.

    Each sweep moves one entry of the configuration at a time with its own
    step size, so entries living on very different scales converge together.
    ``evaluate(cfg)`` returns one value per configuration (NaN = inadmissible);
    ``sense`` is "max" or "min".  ``project`` optionally maps proposals onto a
    set where the extremum is expected; the better of the two is kept.
    Returns ``(best_value, evaluations, best_cfg)``.
    """
    sign = 1.0 if sense == "max" else -1.0
    vals = sign * evaluate(cfg)
    finite = np.isfinite(vals)
    if not finite.any():
        return math.nan, 0, None
    order = np.argsort(np.where(finite, -vals, np.inf))[: min(keep, int(finite.sum()))]
    cur_cfg = {k: v[order].copy() for k, v in cfg.items()}
    cur = vals[order]
    movable = [k for k in cur_cfg if k in KINDS]
    step = {k: np.full(len(order), 0.2) for k in movable}
    evals = 0
    for _ in range(iters):
        for k in movable:
            prop = dict(cur_cfg)
            prop[k] = _perturb({k: cur_cfg[k]}, scene, rng, step[k], ctx)[k]
            pv = sign * evaluate(prop)
            evals += len(order)
            if project is not None:
                alt = project(prop)
                av = sign * evaluate(alt)
                evals += len(order)
                use = np.isfinite(av) & ~(pv >= av)
                prop = {j: np.where(use.reshape((-1,) + (1,) * (alt[j].ndim - 1)), alt[j], prop[j]) for j in prop}
                pv = np.where(use, av, pv)
            better = np.isfinite(pv) & (pv > cur)
            for j in cur_cfg:
                cur_cfg[j] = np.where(better.reshape((-1,) + (1,) * (cur_cfg[j].ndim - 1)), prop[j], cur_cfg[j])
            cur = np.where(better, pv, cur)
            step[k] = np.clip(np.where(better, step[k] * 1.5, step[k] * 0.7), 1e-6, 0.5)
    i = int(np.argmax(cur))
    return float(sign * cur[i]), evals, {k: v[i] for k, v in cur_cfg.items()}


# ------------------------------------------------------------------ suites
# gen_*(scene, rng, size, ctx) -> configuration batch
# eval_*(scene, cfg, ctx) -> {"margin": exact-part margin (>= 0 holds),
#                             "value": quantity whose sup / inf is the constant}


def gen_shell_targets(scene, rng, size, ctx, keys=("X0", "Y"), pair=False, with_x=True, extremes=True):
    X0 = scene.sample_shell(rng, size, extremes=extremes)[:size]
    if len(X0) < size:
        X0 = np.vstack([X0, scene.sample_shell(rng, size - len(X0), extremes=False)])
    cfg = {"X0": X0}
    Y = _targets(scene, rng, size)
    cfg[keys[1]] = Y
    if pair:
        cfg[keys[2]] = _pair_targets(scene, rng, Y)
    if with_x:
        cfg["x"] = _sphere_dirs(rng, _unit(X0), scene.n)
    return cfg


def eval_3_1(scene, cfg, ctx):
    k = scene.kappa
    Bh = bc_scalars(cfg["x"], cfg["Yh"], cfg["X0"], k).B
    fbar = h_value(cfg["x"], cfg["Yb"], cfg["X0"], k)
    return {"margin": (Bh - fbar) / np.abs(Bh)}


def eval_3_3(scene, cfg, ctx):
    k = scene.kappa
    X0, Y, x = cfg["X0"], cfg["Y"], cfg["x"]
    r0 = np.linalg.norm(X0, axis=-1)
    x0 = X0 / r0[:, None]
    m = _unit(Y - X0)
    pre = _dot(x0, m) >= k
    rhs = r0 * (1.0 - k * _dot(x0, m)) / (1.0 - k * _dot(x, m))
    h = h_value(x, Y, X0, k, check=False)
    return {"margin": np.where(pre, (rhs - h) / rhs, np.nan)}


def _curve_targets(scene, X0, Yb, Yh, lam):
    """``Y(lambda)`` on the target surface along ``[m_bar, m_hat]_{x0}`` (batched; NaN when not visible)."""
    surf = scene.target.surface_for_curves()
    x0 = _unit(X0)
    seg = SphericalSegment(x0, _unit(Yb - X0), _unit(Yh - X0), scene.kappa)
    m, _, _ = curve_point(lam, seg)
    s = surf.hit(X0, m)
    return X0 + s[:, None] * m


def gen_3_4(scene, rng, size, ctx):
    cfg = gen_shell_targets(scene, rng, size, ctx, ("X0", "Yb", "Yh"), pair=True, extremes=False)
    # the separation is weakest on the inner shell and for x far from x0
    inner = rng.uniform(size=size) < 0.25
    cfg["X0"][inner] *= (scene.c1 / np.linalg.norm(cfg["X0"][inner], axis=-1))[:, None]
    far = rng.uniform(size=size) < 0.25
    x0 = _unit(cfg["X0"][far])
    cfg["x"][far] = _rotate(-x0, rng.uniform(0.0, 0.5, len(x0)), rng)
    cfg["lam"] = rng.uniform(ctx["lam_lo"], ctx["lam_hi"], size)
    return cfg


def ridge_3_4(scene, cfg, ctx, steps=8):
    """Move ``x`` along the sphere onto ``h(x, Yb, X0) = h(x, Yh, X0)`` by Newton steps.

    The separation gap has a kink there and its first-order part vanishes,
    so the infimum of the ratio is attained on this set.
    """
    k = scene.kappa
    X0, Yb, Yh = cfg["X0"], cfg["Yb"], cfg["Yh"]
    x = cfg["x"].copy()
    for _ in range(steps):
        phi = h_value(x, Yb, X0, k, check=False) - h_value(x, Yh, X0, k, check=False)
        g = grad_h_x(x, Yb, X0, k) - grad_h_x(x, Yh, X0, k)
        g -= _dot(g, x)[:, None] * x
        g2 = np.maximum(_dot(g, g), 1e-300)
        x = _unit(x - (phi / g2)[:, None] * g)
    out = dict(cfg)
    out["x"] = np.where(np.all(np.isfinite(x), axis=-1)[:, None], x, cfg["x"])
    return out


def eval_3_4(scene, cfg, ctx):
    k = scene.kappa
    X0, Yb, Yh, lam, x = cfg["X0"], cfg["Yb"], cfg["Yh"], cfg["lam"], cfg["x"]
    Y = _curve_targets(scene, X0, Yb, Yh, lam)
    x0 = _unit(X0)
    dY = np.linalg.norm(Yb - Yh, axis=-1)
    dx = np.linalg.norm(x - x0, axis=-1)
    ok = np.all(np.isfinite(Y), axis=-1) & (dY >= ctx["dY_min"]) & (dx >= ctx["dx_min"])
    Y = np.where(ok[:, None], Y, Yb)
    top = np.maximum(h_value(x, Yb, X0, k), h_value(x, Yh, X0, k))
    gap = top - h_value(x, Y, X0, k, check=False)
    quad = lam * (1.0 - lam) * dY**2 * dx**2
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.where(ok, gap / np.where(ok, quad, 1.0), np.nan)
    return {"margin": np.where(ok, gap, np.nan), "quad": np.where(ok, quad, np.nan), "value": value}


def eval_4_1(scene, cfg, ctx):
    k = scene.kappa
    Y, X0 = cfg["Y"], cfg["X0"]
    b = support_b(Y, X0, k)
    ynorm = np.linalg.norm(Y, axis=-1)
    pre = b < ynorm
    t_star = np.minimum(b / k**2, (1.0 + ctx["epsilon"]) * ynorm)
    dmin = discriminant(t_star, b, ynorm**2, k)
    return {"margin": np.where(pre, dmin / b**2, np.nan), "value": np.where(pre, dmin, np.nan)}


def gen_4_2(scene, rng, size, ctx):
    cfg = gen_shell_targets(scene, rng, size, ctx, extremes=False)
    r0 = np.linalg.norm(cfg["X0"], axis=-1)
    cfg["t"] = (scene.c2 / r0 - 1.0) * 10.0 ** rng.uniform(-4.0, 0.0, size)
    return cfg


def eval_4_2(scene, cfg, ctx):
    k = scene.kappa
    X0, Y, x, t = cfg["X0"], cfg["Y"], cfg["x"], cfg["t"]
    r0 = np.linalg.norm(X0, axis=-1)
    ok = ((1.0 + t) * r0 <= scene.c2) & (t >= ctx["t_min"])
    h0 = h_value(x, Y, X0, k)
    h1 = h_value(x, Y, (1.0 + t)[:, None] * X0, k, check=False)  # masked by ok
    diff = h1 - h0
    return {"margin": np.where(ok, diff / h0 + 1e-13, np.nan), "value": np.where(ok, diff / (t * r0), np.nan)}


def eval_4_3(scene, cfg, ctx):
    k = scene.kappa
    X0, Y, Yb = cfg["X0"], cfg["Y"], cfg["Yb"]
    x0 = _unit(X0)
    dY = np.linalg.norm(Y - Yb, axis=-1)
    ok = dY >= ctx["dY_min"]
    g = grad_h_x(x0, Y, X0, k) - grad_h_x(x0, Yb, X0, k)
    return {"value": np.where(ok, np.linalg.norm(g, axis=-1) / np.where(ok, dY, 1.0), np.nan)}


def hessian_bound(Y, X0, k, n_t=257):
    """``max_{|t| <= |Y|} |Y|^2 |coef(t)| / 2``: half the largest Hessian norm of ``h`` on the unit ball.

    The Hessian in ``x`` is ``coef(x.Y) Y Y^T`` and depends on ``x`` only
    through ``t = x.Y``, so a one-dimensional grid bounds the Taylor remainder.
    """
    b = support_b(Y, X0, k)
    yn = np.linalg.norm(Y, axis=-1)
    t = yn[:, None] * np.linspace(-1.0, 1.0, n_t)[None, :]
    k2 = k * k
    d = discriminant(t, b[:, None], (yn**2)[:, None], k)
    sq = np.sqrt(d)
    h = (b[:, None] ** 2 - k2 * yn[:, None] ** 2) / (b[:, None] - k2 * t + sq)
    coef = k2 * k2 * h / d * (1.0 + (b[:, None] - k2 * t) / sq)
    return 0.5 * yn**2 * np.max(np.abs(coef), axis=1)


def eval_4_4(scene, cfg, ctx):
    k = scene.kappa
    X0, Y, x = cfg["X0"], cfg["Y"], cfg["x"]
    x0 = _unit(X0)
    d2 = np.sum((x - x0) ** 2, -1)
    ok = d2 >= ctx["dx_min"] ** 2
    rem = np.abs(h_value(x, Y, X0, k) - np.linalg.norm(X0, axis=-1) - _dot(grad_h_x(x0, Y, X0, k), x - x0))
    out = {"value": np.where(ok, rem / np.where(ok, d2, 1.0), np.nan)}
    if "M" in ctx:
        out["margin"] = np.where(ok, ctx["M"] * d2 * (1.0 + 1e-9) - rem, np.nan)
    return out


def eval_4_5(scene, cfg, ctx):
    k = scene.kappa
    X0, Y, Yb, x = cfg["X0"], cfg["Y"], cfg["Yb"], cfg["x"]
    x0 = _unit(X0)
    dY = np.linalg.norm(Y - Yb, axis=-1)
    dx = np.linalg.norm(x - x0, axis=-1)
    ok = (dY >= ctx["dY_min"]) & (dx >= ctx["dx_min"])
    num = np.abs(h_value(x, Y, X0, k) - h_value(x, Yb, X0, k))
    return {"value": np.where(ok, num / np.where(ok, dY * dx, 1.0), np.nan)}


# ------------------------------------------------- refractor lemmas (5.x)


def default_refractor(scene: Scene, N=16):
    """A refractor over the scene: ``N`` foci on the target, every oval aimed at the same radius.

    Used by the refractor suites when no refractor is supplied; a max of
    supporting ovals is all the inequalities ask for.
    """
    from .refractor_solver import initial_refractor
    from .scene import discretize_target
    d = discretize_target(_continuous(scene), N)
    return initial_refractor(d, "aimed")


def ball_dirs(center, delta, rng, size):
    """Points of ``B_delta(center)`` on the sphere, uniform in the tangent-disk radius."""
    n = center.size
    ang_max = 2.0 * math.asin(min(1.0, delta / 2.0))
    v = rng.normal(size=(size, n))
    v -= _dot(v, center)[:, None] * center
    v = _unit(v)
    ang = ang_max * (rng.uniform(0.0, 1.0, size) ** (1.0 / (n - 1)))
    return np.cos(ang)[:, None] * center + np.sin(ang)[:, None] * v


def default_delta(scene: Scene):
    """``0.95`` times the largest ``delta`` with ``B_{2 delta}`` (around the cap axis) inside the cap."""
    return 0.95 * math.sin(scene.omega.half_angle / 2.0)


def slerp(a, b, t):
    ang = np.arccos(np.clip(_dot(a, b), -1.0, 1.0))
    s = np.where(ang < 1e-12, 1.0, np.sin(ang))
    wa = np.where(ang < 1e-12, 1.0 - t, np.sin((1.0 - t) * ang) / s)
    wb = np.where(ang < 1e-12, t, np.sin(t * ang) / s)
    return wa[:, None] * a + wb[:, None] * b


def crossing_point(xb, xh, Yb, Xb, Yh, Xh, kappa, tol=1e-12):
    """``x0`` on the geodesic ``[xb, xh]`` where ``h(., Yb, Xb) = h(., Yh, Xh)``, by bisection."""
    phi = lambda x: h_value(x, Yb, Xb, kappa, check=False) - h_value(x, Yh, Xh, kappa, check=False)  # noqa: E731
    lo = np.zeros(len(xb))
    hi = np.ones(len(xb))
    f_lo = phi(xb)
    while np.max(hi - lo, initial=0.0) > tol:
        mid = 0.5 * (lo + hi)
        fm = phi(slerp(xb, xh, mid))
        same = np.sign(fm) == np.sign(f_lo)
        lo = np.where(same, mid, lo)
        f_lo = np.where(same, fm, f_lo)
        hi = np.where(same, hi, mid)
    return slerp(xb, xh, 0.5 * (lo + hi))


def gen_5(scene, rng, size, ctx):
    """Pairs in ``B_delta`` at log-uniform separations whose active foci differ and pass the gate."""
    u, delta = ctx["u"], ctx["delta"]
    c = scene.omega.axis
    parts = []
    got = 0
    for _ in range(50):
        if got >= size:
            break
        m = 4 * (size - got) + 64
        xb = ball_dirs(c, delta, rng, m)
        ang = 2.0 * delta * 10.0 ** rng.uniform(-3.0, 0.0, m)
        xh = np.cos(ang)[:, None] * xb + np.sin(ang)[:, None] * _rotate(xb, np.ones(m), rng)
        xh = _unit(xh)
        _, ib = u.envelope(xb)
        _, ih = u.envelope(xh)
        keep = ((np.linalg.norm(xh - c, axis=-1) <= delta) & (ib != ih)
                & (np.linalg.norm(u.foci[ib] - u.foci[ih], axis=-1) >= np.linalg.norm(xb - xh, axis=-1)))
        parts.append((xb[keep], xh[keep]))
        got += int(keep.sum())
    xb = np.vstack([p[0] for p in parts])[:size]
    xh = np.vstack([p[1] for p in parts])[:size]
    m = len(xb)
    cfg = {"xb": xb, "xh": xh, "lam": rng.uniform(ctx["lam_lo"], ctx["lam_hi"], m)}
    x = scene.omega.sample_uniform(rng, m)
    # half of the evaluation points close to the pair
    near = np.arange(m) % 2 == 1
    cand = _sphere_dirs(rng, xb, scene.n)
    ok = near & scene.omega.contains(cand)
    x[ok] = cand[ok]
    cfg["xc"] = x
    if ctx["lemma"] == "5.2":
        cfg["Y"] = _targets(scene, rng, m)
    return cfg


def _pair_geometry(scene, cfg, ctx):
    u, k = ctx["u"], scene.kappa
    xb, xh = cfg["xb"], cfg["xh"]
    ub, ib = u.envelope(xb)
    uh, ih = u.envelope(xh)
    Yb, Yh = u.foci[ib], u.foci[ih]
    dYY = np.linalg.norm(Yb - Yh, axis=-1)
    dxx = np.linalg.norm(xb - xh, axis=-1)
    ok = (ib != ih) & (dYY >= dxx) & (dxx > 0)
    Xb, Xh = ub[:, None] * xb, uh[:, None] * xh
    x0 = crossing_point(xb, xh, Yb, Xb, Yh, Xh, k)
    rho0 = h_value(x0, Yb, Xb, k, check=False)
    u0, _ = u.envelope(x0)
    X0 = u0[:, None] * x0
    Ylam = _curve_targets(scene, X0, Yb, np.where(ok[:, None], Yh, Yb + 1.0), cfg["lam"])
    ok &= np.all(np.isfinite(Ylam), axis=-1)
    return dict(Yb=Yb, Yh=Yh, dYY=dYY, dxx=dxx, x0=x0, X0=X0, u0=u0, rho0=rho0,
                Ylam=np.where(ok[:, None], Ylam, Yb), ok=ok)


def eval_5(scene, cfg, ctx):
    g = _pair_geometry(scene, cfg, ctx)
    u, k = ctx["u"], scene.kappa
    x = cfg["xc"]
    ux, _ = u.envelope(x)
    dx0 = np.linalg.norm(x - g["x0"], axis=-1)
    quad = ctx["K1"] * cfg["lam"] * (1.0 - cfg["lam"]) * g["dYY"] ** 2 * dx0**2
    ok = g["ok"]
    with np.errstate(divide="ignore", invalid="ignore"):
        claim = np.where(ok, (g["u0"] - g["rho0"]) / (g["dxx"] * g["dYY"]), np.nan)
    if ctx["lemma"] == "5.1":
        deficit = h_value(x, g["Ylam"], g["X0"], k, check=False) + quad - ux
        den = g["dxx"] * g["dYY"]
    else:
        Y = cfg["Y"]
        deficit = h_value(x, Y, g["X0"], k, check=False) + quad - ux
        den = np.linalg.norm(Y - g["Ylam"], axis=-1) * dx0 + g["dYY"] * g["dxx"]
    value = np.maximum(deficit, 0.0) / np.where(den > 0, den, 1.0)
    return {"value": np.where(ok & (den > 0), value, np.nan), "claim": claim}


# ---------------------------------------------------------------- runner


LEMMAS = ("3.1", "3.2", "3.3", "3.4", "4.1", "4.2", "4.3", "4.4", "4.5", "5.1", "5.2")

# kind, objective sense for the constant, generator, evaluator
SUITES = {
    "3.1": ("exact", None, lambda s, r, n, c: gen_shell_targets(s, r, n, c, ("X0", "Yb", "Yh"), pair=True), eval_3_1),
    "3.3": ("exact", None, gen_shell_targets, eval_3_3),
    "3.4": ("mixed", "min", gen_3_4, eval_3_4),
    "4.1": ("exact", "min", lambda s, r, n, c: gen_shell_targets(s, r, n, c, with_x=False), eval_4_1),
    "4.2": ("mixed", "max", gen_4_2, eval_4_2),
    "4.3": ("existential", "max",
            lambda s, r, n, c: gen_shell_targets(s, r, n, c, ("X0", "Y", "Yb"), pair=True, with_x=False), eval_4_3),
    "4.4": ("exact", "max", gen_shell_targets, eval_4_4),
    "4.5": ("existential", "max",
            lambda s, r, n, c: gen_shell_targets(s, r, n, c, ("X0", "Y", "Yb"), pair=True), eval_4_5),
    "5.1": ("existential", "max", gen_5, eval_5),
    "5.2": ("existential", "max", gen_5, eval_5),
}

PROJECTIONS = {"3.4": ridge_3_4}

CONSTANT_NAMES = {
    "3.4": "C0: inf of gap / (lambda(1-lambda)|Yb-Yh|^2|x-x0|^2)",
    "4.1": "C0: inf of Delta over |x| <= 1 + epsilon",
    "4.2": "C: sup of (h(x,Y,(1+t)X0) - h(x,Y,X0)) / (t|X0|)",
    "4.3": "C: sup of |grad h(x0,Y,X0) - grad h(x0,Yb,X0)| / |Y - Yb|",
    "4.4": "M: sup of |Taylor remainder| / |x - x0|^2",
    "4.5": "C: sup of |h(x,Y,X0) - h(x,Yb,X0)| / (|Y - Yb||x - x0|)",
    "5.1": "K2: sup of deficit / (|xb - xh||Yb - Yh|)",
    "5.2": "K2 = K3: sup of deficit / (|Y - Y(lambda)||x - x0| + |Yb - Yh||xb - xh|)",
}

REFINE_KEEP = 64
REFINE_ITERS = 40


def _drift(a, b):
    if not (math.isfinite(a) and math.isfinite(b)):
        return math.inf
    den = max(abs(a), abs(b))
    return 0.0 if den == 0.0 else abs(a - b) / den


def _ctx(lemma_id, scene):
    diam = scene.target.diameter
    # the Taylor ratio stays well conditioned much closer to x0
    dx_min = 1e-3 if lemma_id == "4.4" else 0.01
    return {"lemma": lemma_id, "lam_lo": 0.01, "lam_hi": 0.99, "dY_min": 0.01 * diam, "dx_min": dx_min,
            "t_min": 1e-6, "epsilon": min(0.1, 0.5 * (1.0 / scene.kappa - 1.0))}


def _rng(seed, lemma_id, stream):
    return np.random.default_rng([seed, int(lemma_id.replace(".", "")), stream])


def _constant(lemma_id, scene, size, seed, stream, ctx, extra=0):
    """Sample, then refine the extreme configurations; returns (constant, raw results, counts).

    With ``extra`` the batch is the ``size`` configurations of ``stream``
    followed by ``extra`` more from the next stream, so a larger budget always
    contains the smaller one.
    """
    kind, sense, gen, ev = SUITES[lemma_id]
    rng = _rng(seed, lemma_id, stream)
    cfg = gen(scene, rng, size, ctx)
    if extra:
        more = gen(scene, _rng(seed, lemma_id, stream + 1), extra, ctx)
        cfg = {k: np.concatenate([cfg[k], more[k]]) for k in cfg}
        rng = _rng(seed, lemma_id, stream + 2)
    res = ev(scene, cfg, ctx)
    vals = res["value"]
    valid = int(np.isfinite(vals).sum())
    project = (lambda c: PROJECTIONS[lemma_id](scene, c, ctx)) if lemma_id in PROJECTIONS else None
    best, evals, wit = local_search(lambda c: ev(scene, c, ctx)["value"], cfg, scene, rng, sense, ctx,
                                    REFINE_KEEP, REFINE_ITERS, project)
    raw = np.nanmax(vals) if sense == "max" else np.nanmin(vals)
    best = max(best, raw) if sense == "max" else min(best, raw)
    return float(best), res, valid, evals, wit


def calibrate_C0(scene: Scene, samples=2000, seed=0):
    """Calibrated constant of the quadratic separation estimate: half the refined infimum."""
    scene = _continuous(scene)
    c, *_ = _constant("3.4", scene, samples, seed, 9, _ctx("3.4", scene))
    return 0.5 * c


def calibrate_M(scene: Scene, samples=2000, seed=0):
    """Taylor constant from the Hessian bound, maximised over calibration configurations."""
    rng = _rng(seed, "4.4", 9)
    cfg = gen_shell_targets(scene, rng, samples, {})
    hb = lambda c: hessian_bound(c["Y"], c["X0"], scene.kappa)  # noqa: E731
    best, _, _ = local_search(hb, cfg, scene, rng, "max", {}, REFINE_KEEP, REFINE_ITERS // 3)
    return float(max(best, np.max(hb(cfg))))


def run_lemma_suite(lemma_id, scene: Scene, samples=10_000, seed=0, refractor: DiscreteRefractor = None,
                    gate=True, delta=None, K1=None):
    """Run one verification suite and return a ``LemmaReport``.

    ``refractor`` is only used by the 5.x suites (a default one is built when
    omitted).  With ``gate`` the hypotheses a lemma assumes are checked first
    and ``HypothesisNotSatisfied`` is raised when one fails.
    """
    lemma_id = str(lemma_id)
    if lemma_id not in LEMMAS:
        raise InvalidParameters(f"unknown lemma {lemma_id!r}; choose from {', '.join(LEMMAS)}")
    req = REQUIRED[lemma_id]
    if lemma_id == "3.2":
        # a statement about f(B, C) alone; the scene is not used
        return _run_3_2(samples, seed)
    if isinstance(scene.target, DiscretePoints) and scene.target.surface is not None:
        scene = _continuous(scene)
    if gate:
        require_hypotheses(scene, req, seed=seed)
    tol = TOL.residual
    kind, sense, gen, ev = SUITES[lemma_id]
    ctx = _ctx(lemma_id, scene)
    consts = {}
    if lemma_id in ("5.1", "5.2"):
        ctx["u"] = refractor if refractor is not None else default_refractor(scene)
        ctx["delta"] = delta if delta is not None else default_delta(scene)
        ctx["K1"] = K1 if K1 is not None else calibrate_C0(scene, seed=seed)
        consts.update({"K1": ctx["K1"], "delta": ctx["delta"], "foci": ctx["u"].size})
    if lemma_id == "4.4":
        ctx["M"] = calibrate_M(scene, seed=seed)
        consts["M_calibrated"] = ctx["M"]
    if lemma_id == "4.1":
        consts["epsilon"] = ctx["epsilon"]

    violations, worst = 0, None
    emp = stab = drift = None
    if sense is None:
        rng = _rng(seed, lemma_id, 0)
        cfg = gen(scene, rng, samples, ctx)
        margin = ev(scene, cfg, ctx)["margin"]
        # adversarial refinement of the smallest margins
        adv, evals, _ = local_search(lambda c: ev(scene, c, ctx)["margin"], cfg, scene, rng, "min", ctx,
                                     REFINE_KEEP, REFINE_ITERS)
        ok = np.isfinite(margin)
        tested = int(ok.sum())
        violations = int(np.sum(margin[ok] < -tol)) + int(adv < -tol)
        worst = float(min(np.min(margin[ok]), adv))
        consts.update({"precondition_skipped": int((~ok).sum()), "refinement_evaluations": evals})
    else:
        c1, res1, n1, ev1, wit = _constant(lemma_id, scene, samples, seed, 0, ctx)
        tested = n1
        emp = c1
        if kind != "exact":
            c4, _, n4, ev4, wit = _constant(lemma_id, scene, samples, seed, 0, ctx, extra=3 * samples)
            tested = n4
            emp = c4
            drift = _drift(c1, c4)
            stab = drift < TOL.stability_drift
            consts.update({"constant_at_samples": c1, "constant_at_4x_samples": c4,
                           "refinement_evaluations": ev1 + ev4})
        else:
            consts["refinement_evaluations"] = ev1
        if "margin" in res1 or lemma_id == "3.4":
            if lemma_id == "3.4":
                C0 = calibrate_C0(scene, seed=seed)
                consts["C0_calibrated"] = C0
                consts["negative_gaps"] = int(np.nansum(res1["margin"] < -tol))
                m = res1["margin"] - C0 * res1["quad"]
                # the refined infimum must stay above the calibrated constant
                violations = int(emp < C0)
            else:
                m = res1["margin"]
                if lemma_id == "4.4":
                    violations = int(emp > ctx["M"] * (1.0 + 1e-9))
            ok = np.isfinite(m)
            violations += int(np.sum(m[ok] < -tol))
            worst = float(np.min(m[ok]))
        if lemma_id == "4.1":
            violations += int(emp <= 0.0)
        if "claim" in res1:
            consts["claim_ratio_sup"] = float(np.nanmax(res1["claim"]))
        if wit is not None:
            consts["extremal_configuration"] = wit
    return LemmaReport(lemma_id, kind, tested, violations, worst, emp, CONSTANT_NAMES.get(lemma_id, ""),
                       stab, drift, consts, list(req), seed)


def _run_3_2(samples, seed):
    rng = np.random.default_rng([seed, 32, 0])
    Bb = rng.uniform(0.5, 3.0, samples)
    Cb = Bb**2 * rng.uniform(0.0, 1.0, samples)
    fb = f_BC(Bb, Cb)
    B = fb + rng.uniform(0.0, 3.0, samples)
    C = B**2 * rng.uniform(0.0, 1.0, samples)
    f = f_BC(B, C)
    scale = 1.0 + B**2
    tol = 1e-12 * scale

    def iff_margin(p, q, sc):
        # p >= 0 iff f(B,C) <= f(Bb,Cb); q >= 0 iff C - Cb <= 2 (B - Bb) f(Bb,Cb)
        t = 1e-12 * sc
        bad = ((p < -t) & (q > t)) | ((p > t) & (q < -t))
        mag = np.minimum(np.abs(p), np.abs(q)) / sc
        return np.where(bad, -mag, mag)

    q = 2.0 * (B - Bb) * fb - (C - Cb)
    m_iff = iff_margin(fb - f, q, scale)
    # slack form wherever the linear condition holds
    ok = q >= 0
    E = rng.uniform(0.0, 1.0, samples) * np.maximum(q, 0.0)
    m_slack = (slack_update(Bb[ok], Cb[ok], B[ok], C[ok], E[ok]) - f[ok] + tol[ok]) / scale[ok]
    # the equality manifold C = Cb + 2 (B - Bb) f(Bb, Cb)
    Bm = fb + rng.uniform(0.0, 3.0, samples)
    Cm = Cb + 2.0 * (Bm - Bb) * fb
    # f = B - sqrt(B^2 - C) loses digits as B - f -> 0; weight by its condition number B / sqrt(B^2 - C)
    cond = 1.0 + Bm / np.maximum(Bm - fb, 1e-300)
    m_eq = 1e-12 - np.abs(f_BC(Bm, Cm) - fb) / ((1.0 + Bm**2) * cond)
    # a 100 x 100 grid around (Bb, Cb) = (2, 1)
    gB, gC = np.meshgrid(np.linspace(1.0, 4.0, 100), np.linspace(0.0, 1.0, 100))
    Bg = gB.ravel()
    Cg = Bg**2 * gC.ravel()
    fb0 = float(f_BC(2.0, 1.0))
    keep = Bg >= fb0
    m_grid = iff_margin(fb0 - f_BC(Bg[keep], Cg[keep]), 2.0 * (Bg[keep] - 2.0) * fb0 - (Cg[keep] - 1.0),
                        1.0 + Bg[keep] ** 2)
    margin = np.concatenate([m_iff, m_slack, m_eq, m_grid])
    v = int(np.sum(margin < 0.0))
    return LemmaReport("3.2", "exact", margin.size, v, float(margin.min()), None, "", None, None,
                       {"iff_samples": samples, "slack_samples": int(ok.sum()), "equality_samples": samples,
                        "grid_points": int(keep.sum())}, [], seed)


def verify_lemmas(scene: Scene, lemma_ids=LEMMAS, samples=10_000, seed=0, refractor=None):
    return {lid: run_lemma_suite(lid, scene, samples, seed, refractor) for lid in lemma_ids}


# ------------------------------------------------------------------ Holder


@dataclass
class HolderReport:
    kind: str                      # "map" or "gradient"
    n: int
    alpha_theoretical: float
    delta: float
    scales: list                   # t_k = 2^-k delta
    modulus: list                  # omega(t_k)
    ratios: list                   # omega(t_k) / t_k^alpha
    fitted_ratio_sup: float
    best_fit_exponent: float       # informational only
    pairs_per_scale: list
    gated_pairs: list
    excluded_ties: int
    gate_C1: float | None
    seed: int
    foci: int
    stability: dict = None

    @property
    def passes(self):
        ok = math.isfinite(self.fitted_ratio_sup)
        if self.stability is not None:
            ok = ok and self.stability["stable"]
        return ok

    def to_dict(self):
        d = _plain(asdict(self))
        d["passes"] = self.passes
        return d

    def rows(self):
        """``(scale, modulus, ratio)`` rows for plotting."""
        return list(zip(self.scales, self.modulus, self.ratios))


def holder_alpha(n):
    return 1.0 / (4 * n - 5)


def _pairs_at_scale(center, delta, lo, hi, rng, size):
    """``size`` pairs in ``B_delta(center)`` with chordal distance in ``[lo, hi]``."""
    n = center.size
    xs, ys = [], []
    got = 0
    while got < size:
        m = 2 * (size - got) + 64
        xb = ball_dirs(center, delta, rng, m)
        d = rng.uniform(lo, hi, m)
        ang = 2.0 * np.arcsin(d / 2.0)
        v = rng.normal(size=(m, n))
        v -= _dot(v, xb)[:, None] * xb
        v = _unit(v)
        xh = np.cos(ang)[:, None] * xb + np.sin(ang)[:, None] * v
        keep = np.linalg.norm(xh - center, axis=-1) <= delta
        xs.append(xb[keep])
        ys.append(xh[keep])
        got += int(keep.sum())
    return np.vstack(xs)[:size], np.vstack(ys)[:size]


def _active_data(u: DiscreteRefractor, x, tie_tol=TOL.tie):
    _, idx, g, tie = u.active(x, tie_tol)
    g = g - _dot(g, x)[:, None] * x
    return idx, tie, g


def _best_fit_exponent(t, w):
    t, w = np.asarray(t), np.asarray(w)
    ok = w > 0
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(t[ok]), np.log(w[ok]), 1)[0])


def _estimate_holder(kind, u: DiscreteRefractor, scene: Scene, delta=None, scales=6, budget=2000, seed=0,
                     C1=1.0, center=None):
    if delta is None:
        delta = default_delta(scene)
    if center is None:
        center = scene.omega.axis
    alpha = holder_alpha(scene.n)
    rng = np.random.default_rng([seed, 53 if kind == "map" else 54])
    ts, om, ratios, tested, gated = [], [], [], [], []
    ties = 0
    for k in range(1, scales + 1):
        t = delta * 2.0**-k
        xb, xh = _pairs_at_scale(center, delta, 0.5 * t, t, rng, budget)
        ib, tb, gb = _active_data(u, xb)
        ih, th, gh = _active_data(u, xh)
        ok = ~(tb | th)
        ties += int((~ok).sum())
        dx = np.linalg.norm(xb - xh, axis=-1)
        if kind == "map":
            val = np.linalg.norm(u.foci[ib] - u.foci[ih], axis=-1)
            ok &= val >= C1 * dx
        else:
            val = np.linalg.norm(gb - gh, axis=-1)
        w = float(np.max(val[ok])) if ok.any() else 0.0
        ts.append(t)
        om.append(w)
        ratios.append(w / t**alpha)
        tested.append(len(xb))
        gated.append(int(ok.sum()))
    return HolderReport(kind, scene.n, alpha, float(delta), ts, om, ratios, float(max(ratios)),
                        _best_fit_exponent(ts, om), tested, gated, ties, C1 if kind == "map" else None,
                        seed, u.size)


def estimate_holder_map(u: DiscreteRefractor, scene: Scene, delta=None, scales=6, budget=2000, seed=0, C1=1.0):
    """Dyadic modulus of the target map ``x -> Y(x)`` on ``B_delta``.

    Pairs with ``|xb - xh|`` in ``[t/2, t]``, ``t = 2^-k delta``, are kept when
    ``|Yb - Yh| >= C1 |xb - xh|``; ``omega(t)`` is the largest ``|Yb - Yh|``.
    Pairs touching a cell boundary are excluded and counted.
    """
    return _estimate_holder("map", u, scene, delta, scales, budget, seed, C1)


def estimate_holder_gradient(u: DiscreteRefractor, scene: Scene, delta=None, scales=6, budget=2000, seed=0):
    """Dyadic modulus of the tangential gradient of ``u`` (exact per active oval) on ``B_delta``."""
    return _estimate_holder("gradient", u, scene, delta, scales, budget, seed)


def solved_example(scene: Scene, N, tol=None, layout="auto"):
    """Discretize the scene's target into ``N`` equal-weight points and solve.

    The default tolerance is 1e-3 for n = 2 and 1e-2 for n = 3, where the
    default quadrature puts a noise floor near 1e-3 on the energies.
    """
    from .refractor_solver import SolverConfig, solve
    from .scene import discretize_target
    if tol is None:
        tol = 1e-3 if scene.n == 2 else 1e-2
    d = discretize_target(_continuous(scene), N, layout)
    return d, solve(d, SolverConfig(tol_energy=tol, method="newton")).refractor


def holder_refinement_stability(scene: Scene, N, factor=4, kind="map", max_drift=0.10, solutions=None,
                                **kw):
    """Compare the dyadic sup-ratio of refractors solved with ``N`` and ``factor * N`` targets.

    Returns ``(report_at_factor_N, stability dict)``; ``solutions`` may pass
    the two ``(scene, refractor)`` pairs already solved.
    """
    est = estimate_holder_map if kind == "map" else estimate_holder_gradient
    if solutions is None:
        solutions = [solved_example(scene, N), solved_example(scene, factor * N)]
    (s1, u1), (s2, u2) = solutions
    r1 = est(u1, s1, **kw)
    r2 = est(u2, s2, **kw)
    drift = _drift(r1.fitted_ratio_sup, r2.fitted_ratio_sup)
    stab = {"N": u1.size, "refined_N": u2.size, "ratio_sup_N": r1.fitted_ratio_sup,
            "ratio_sup_refined": r2.fitted_ratio_sup, "drift": drift, "max_drift": max_drift,
            "stable": bool(drift < max_drift), "nonincreasing": bool(r2.fitted_ratio_sup <= r1.fitted_ratio_sup)}
    r2.stability = stab
    return r2, stab


# ------------------------------------------------------- measure condition


@dataclass
class MeasureConditionReport:
    sigmas: list
    centers: int
    measures: list                 # sup over centres of the surrogate measure at each sigma
    ratios: list                   # measures / sigma^(n-1)
    ratio_sup: float
    bound: float                   # a priori bound at resolved scales
    resolved: list                 # sigma >= 2 x the largest cell diameter
    cell_areas: list
    seed: int

    @property
    def passes(self):
        return math.isfinite(self.ratio_sup) and all(
            r <= self.bound for r, ok in zip(self.ratios, self.resolved) if ok)

    def to_dict(self):
        d = _plain(asdict(self))
        d["passes"] = self.passes
        return d


def _cap_area(sigma, n):
    """``H^{n-1}(B_sigma(x) cap S^{n-1})`` for chordal radius ``sigma``."""
    if n == 2:
        return 4.0 * math.asin(min(sigma, 2.0) / 2.0)
    return math.pi * min(sigma, 2.0) ** 2


def target_cell_areas(scene: Scene, samples=200_000, seed=0):
    """Monte Carlo area of each target point's nearest-point (Voronoi) patch on the target surface."""
    tgt = scene.target
    surf = tgt.surface_for_curves()
    rng = np.random.default_rng([seed, 55])
    P = surf.sample_uniform(rng, samples)
    _, j = cKDTree(tgt.points).query(P)
    return np.bincount(j, minlength=tgt.size) / samples * surf.area()


def measure_condition_check(u: DiscreteRefractor, scene: Scene, sigma_list=None, centers=8, probe=4000, seed=0,
                            cell_areas=None):
    """Surrogate of ``H^{n-1}(du(B_sigma))``: the total patch area of the foci active somewhere in ``B_sigma``.

    For each ``sigma`` the sup over ``centers`` points of ``B_delta`` of the
    measure divided by ``sigma^(n-1)``.  At resolved scales the ratio is
    bounded by ``4 max(A_j / w_j) sup f  area(B_sigma)/sigma^(n-1)``.
    """
    n = scene.n
    if not isinstance(scene.target, DiscretePoints):
        raise InvalidParameters("the measure condition check needs a discrete target")
    delta = default_delta(scene)
    if sigma_list is None:
        sigma_list = [delta * 2.0**-k for k in range(6)]
    A = target_cell_areas(scene, seed=seed) if cell_areas is None else np.asarray(cell_areas, float)
    rng = np.random.default_rng([seed, 56])
    cs = np.vstack([scene.omega.axis[None], ball_dirs(scene.omega.axis, delta, rng, centers - 1)])
    # largest source cell: the biggest chordal distance from a probe point to its cell's nearest probe
    grid = ball_dirs(scene.omega.axis, 2.0 * delta, rng, 20 * probe)
    _, gi = u.envelope(grid)
    cell_diam = 0.0
    for i in np.unique(gi):
        pts = grid[gi == i]
        if len(pts) > 1:
            cell_diam = max(cell_diam, float(np.max(np.linalg.norm(pts - pts.mean(0), axis=-1))) * 2.0)
    w = scene.target.weights
    g_max = float(np.max(A / w))
    f_max = scene.density.sup(scene.omega)
    measures, ratios, resolved = [], [], []
    for s in sigma_list:
        best = 0.0
        for c in cs:
            x = ball_dirs(c, s, rng, probe)
            _, idx = u.envelope(x)
            best = max(best, float(A[np.unique(idx)].sum()))
        measures.append(best)
        ratios.append(best / s ** (n - 1))
        resolved.append(bool(s >= 2.0 * cell_diam))
    bound = 4.0 * g_max * f_max * max(_cap_area(s, n) / s ** (n - 1) for s in sigma_list)
    return MeasureConditionReport(list(map(float, sigma_list)), len(cs), measures, ratios, float(max(ratios)),
                                  float(bound), resolved, A.tolist(), seed)
