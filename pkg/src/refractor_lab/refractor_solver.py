"""Envelope refractors ``u = max_i rho(., Y_i, b_i)`` and the energy-balance solver.

Each oval ``O(Y_i, b_i)`` lies radially below ``u`` and touches it on its
cell ``V_i = {x : argmax = i}``; rays through ``V_i`` are refracted into the
focus ``Y_i``.  Solving means choosing the ``b_i`` so that the source energy
in ``V_i`` equals the weight of ``Y_i``.

Cell energies use a smoothed indicator: a quadrature cell straddling the
boundary between its two highest ovals is split by linearising the boundary
through the node.  This keeps ``G_i`` continuous in ``b``, which both the
coordinate sweep and the Newton step rely on.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .config import TOL
from .errors import (
    InfeasibleRadialBounds,
    InvalidParameters,
    NotConverged,
    SupportViolation,
)
from .geom_core import OvalParams, drho_db, h_value, support_b
from .quadrature import CapQuadrature, default_quadrature, smooth_fraction, smooth_fraction_slope
from .scene import DiscretePoints, Scene

_dot = lambda a, b: np.einsum("...i,...i->...", a, b)  # noqa: E731


@dataclass
class DiscreteRefractor:
    kappa: float
    foci: np.ndarray   # (N, n)
    b: np.ndarray      # (N,)

    def __post_init__(self):
        self.foci = np.atleast_2d(np.asarray(self.foci, float))
        self.b = np.asarray(self.b, float).reshape(-1)
        if self.foci.shape[0] != self.b.size:
            raise InvalidParameters("one oval parameter per focus")

    @property
    def size(self):
        return self.b.size

    @property
    def ovals(self):
        return [OvalParams(Y, float(b), self.kappa) for Y, b in zip(self.foci, self.b)]

    def radii(self, x):
        """``rho_i(x)`` for every oval: shape ``x.shape[:-1] + (N,)``."""
        x = np.asarray(x, float)
        k2 = self.kappa**2
        b = self.b
        P = b * b - k2 * _dot(self.foci, self.foci)
        # in place: s = b - k2 x.Y, r = P / (s + sqrt(s^2 - (1 - k2) P))
        s = x @ (k2 * self.foci).T
        np.subtract(b, s, out=s)
        d = s * s
        d -= (1.0 - k2) * P
        np.maximum(d, 0.0, out=d)
        np.sqrt(d, out=d)
        d += s
        np.divide(P, d, out=d)
        return d

    def radii_and_gradients(self, x):
        """Radii and full gradients ``kappa^2 rho Y / sqrt(Delta)`` for every oval."""
        x = np.asarray(x, float)
        k2 = self.kappa**2
        t = x @ self.foci.T
        yy = _dot(self.foci, self.foci)
        b = self.b
        sq = np.sqrt(np.maximum((b - k2 * t) ** 2 - (1.0 - k2) * (b * b - k2 * yy), 0.0))
        r = (b * b - k2 * yy) / (b - k2 * t + sq)
        return r, (k2 * r / sq)[..., None] * self.foci

    def radius_and_gradient_of(self, x, idx):
        """Radius and gradient of oval ``idx[k]`` at ``x[k]`` only."""
        x = np.asarray(x, float)
        k2 = self.kappa**2
        Y = self.foci[idx]
        b = self.b[idx]
        t = _dot(x, Y)
        yy = _dot(Y, Y)
        sq = np.sqrt(np.maximum((b - k2 * t) ** 2 - (1.0 - k2) * (b * b - k2 * yy), 0.0))
        r = (b * b - k2 * yy) / (b - k2 * t + sq)
        return r, (k2 * r / sq)[..., None] * Y

    def envelope(self, x):
        x = np.asarray(x, float)
        if x.ndim == 1 or x.shape[0] * self.size <= CHUNK:
            R = self.radii(x)
            return R.max(axis=-1), R.argmax(axis=-1)
        # blocked so the node-by-oval matrix stays bounded for large scenes
        step = max(1, CHUNK // self.size)
        r = np.empty(x.shape[0])
        i = np.empty(x.shape[0], int)
        for s in range(0, x.shape[0], step):
            r[s:s + step], i[s:s + step] = self.envelope(x[s:s + step])
        return r, i

    def active(self, x, tie_tol=TOL.tie):
        """Envelope radius, active index, its gradient, and a mask of points within ``tie_tol`` of a tie."""
        x = np.asarray(x, float)
        flat = x.reshape(-1, x.shape[-1])
        idx, second = _top_two_blocked(self, flat)
        top, g = self.radius_and_gradient_of(flat, idx)
        if self.size > 1:
            r2 = self.radius_and_gradient_of(flat, second)[0]
            tie = r2 >= top - tie_tol * np.maximum(1.0, top)
        else:
            tie = np.zeros(top.shape, bool)
        shape = x.shape[:-1]
        return top.reshape(shape), idx.reshape(shape), g.reshape(x.shape), tie.reshape(shape)

    def evaluate(self, x, tie_tol=TOL.tie):
        """Radius, lowest maximising index, and every index within ``tie_tol`` of the max."""
        R = self.radii(np.asarray(x, float))
        u = float(R.max())
        ties = np.flatnonzero(R >= u - tie_tol * max(1.0, u))
        return EnvelopeValue(u, int(ties[0]), ties.tolist())

    def to_dict(self):
        return {"kappa": self.kappa, "ovals": [{"Y": Y.tolist(), "b": float(b)} for Y, b in zip(self.foci, self.b)]}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["kappa"]), np.array([o["Y"] for o in d["ovals"]], float),
                   np.array([o["b"] for o in d["ovals"]], float))


@dataclass
class EnvelopeValue:
    radius: float
    argmax_index: int
    ties: list


@dataclass
class EnergyVector:
    G: np.ndarray
    quadrature_error: float
    per_target_error: np.ndarray = None
    boundary_mass: float = 0.0


@dataclass(frozen=True)
class SolverConfig:
    tol_energy: float = 1e-3
    quadrature_resolution: int | None = None   # cells (n=2) or rings (n=3)
    n_phi: int = 512
    max_outer_iterations: int = 200
    b_tol: float = 1e-14                       # relative bisection tolerance on b
    method: str = "sweep"                      # "sweep", "newton" or "hybrid"
    polish_tol: float | None = None            # Newton polish target after the sweep
    stall_window: int = 5
    stall_factor: float = 0.99

    def __post_init__(self):
        if self.tol_energy <= 0:
            raise InvalidParameters("tol_energy must be positive")
        if self.method not in ("sweep", "newton", "hybrid"):
            raise InvalidParameters(f"unknown method {self.method!r}")


@dataclass
class SolveResult:
    refractor: DiscreteRefractor
    energies: np.ndarray
    residuals: np.ndarray
    iterations: int
    trace: list = field(default_factory=list)   # (sweep, max_rel_residual, wall_time_s)
    quadrature: CapQuadrature = None


# ------------------------------------------------------------ envelope ops


def subdifferential(u: DiscreteRefractor, x0, scene: Scene = None, tol=TOL.tie, grid=None):
    """Indices of ovals touching ``u`` at ``x0``, each checked to support ``u`` on a grid."""
    x0 = np.asarray(x0, float)
    R = u.radii(x0)
    u0 = R.max()
    idx = np.flatnonzero(R >= u0 - tol * max(1.0, u0))
    if grid is None and scene is not None:
        grid = scene.omega.sample_uniform(np.random.default_rng(0), 2000)
    if grid is not None:
        ug, _ = u.envelope(grid)
        X0 = u0 * x0
        for i in idx:
            h = h_value(grid, u.foci[i], X0, u.kappa, check=False)
            gap = float(np.min(ug - h))
            if gap < -TOL.support:
                raise SupportViolation(f"oval {i} rises {-gap:.3g} above the envelope")
    return idx.tolist()


def _top_two(R):
    """Indices of the largest and second largest entry per row (ties to the lower index).

    ``R`` is overwritten.
    """
    N = R.shape[1]
    if N == 1:
        z = np.zeros(R.shape[0], int)
        return z, z
    rows = np.arange(R.shape[0])
    first = R.argmax(axis=1)
    R[rows, first] = -np.inf
    return first, R.argmax(axis=1)


CHUNK = 1 << 22  # matrix entries per block when evaluating every oval at every node


def _top_two_blocked(u: DiscreteRefractor, x):
    step = max(1, CHUNK // max(1, u.size))
    a = np.empty(len(x), int)
    c = np.empty(len(x), int)
    for s in range(0, len(x), step):
        a[s:s + step], c[s:s + step] = _top_two(u.radii(x[s:s + step]))
    return a, c


def _split(x, ra, rc, ga, gc, radius, n):
    """Smoothed share of the top oval and the signed distance data used for it."""
    dg = ga - gc
    dg = dg - _dot(dg, x)[..., None] * x
    gn = np.maximum(np.linalg.norm(dg, axis=-1), 1e-300)
    delta = (ra - rc) / gn
    return smooth_fraction(delta, radius, n), delta, gn


def _energy_parts(u: DiscreteRefractor, scene: Scene, quad: CapQuadrature):
    x = quad.nodes
    wf = quad.weights * scene.f(x)
    a, c = _top_two_blocked(u, x)
    if u.size == 1:
        return wf, a, c, np.ones(len(x)), None, None
    ra, ga = u.radius_and_gradient_of(x, a)
    rc, gc = u.radius_and_gradient_of(x, c)
    share, delta, gn = _split(x, ra, rc, ga, gc, quad.cell_radius, scene.n)
    return wf, a, c, share, delta, gn


def tracing_energy(u: DiscreteRefractor, scene: Scene, quad: CapQuadrature = None):
    """Source energy reaching each target: ``G_i = integral of f over V_i``.

    ``quadrature_error`` adds the mismatch of the discrete total against the
    exact source energy to the mass of boundary cells times the cell radius,
    a first-order bound on the linearised-boundary split.
    """
    quad = quad or default_quadrature(scene.omega, u.size)
    wf, a, c, share, *_ = _energy_parts(u, scene, quad)
    N = u.size
    G = np.bincount(a, wf * share, N) + np.bincount(c, wf * (1.0 - share), N)
    cut = (share > 0.0) & (share < 1.0)
    bmass = float(wf[cut].sum())
    per = (np.bincount(a[cut], wf[cut], N) + np.bincount(c[cut], wf[cut], N)) * quad.cell_radius
    total_err = abs(float(wf.sum()) - scene.source_energy())
    return EnergyVector(G, total_err + bmass * quad.cell_radius, per, bmass)


def energy_jacobian(u: DiscreteRefractor, scene: Scene, quad: CapQuadrature):
    """``G`` and ``dG_i/db_j`` of the smoothed energies (gradient norms held fixed)."""
    wf, a, c, share, delta, gn = _energy_parts(u, scene, quad)
    N = u.size
    G = np.bincount(a, wf * share, N) + np.bincount(c, wf * (1.0 - share), N)
    J = np.zeros((N, N))
    if N == 1:
        return G, J
    x = quad.nodes
    fa = drho_db(x, u.foci[a], u.b[a], u.kappa)
    fc = drho_db(x, u.foci[c], u.b[c], u.kappa)
    slope = wf * smooth_fraction_slope(delta, quad.cell_radius, scene.n) / gn
    for (i, j), v in (((a, a), slope * fa), ((a, c), -slope * fc), ((c, a), -slope * fa), ((c, c), slope * fc)):
        np.add.at(J, (i, j), v)
    return G, J


def weak_solution_residual(u: DiscreteRefractor, scene: Scene, partition=None, quad=None):
    """``max_B |mu(T_u(B)) - nu(B)| / nu(Sigma)`` over a partition of the target indices."""
    G = tracing_energy(u, scene, quad).G
    w = scene.target.weights
    partition = partition if partition is not None else [[i] for i in range(u.size)]
    return float(max(abs(G[list(B)].sum() - w[list(B)].sum()) for B in partition) / w.sum())


# ------------------------------------------------------------------ solver


def _aim_direction(scene: Scene, Y):
    """Direction of ``Y`` clipped to the cap."""
    y = Y / np.linalg.norm(Y)
    ax, a = scene.omega.axis, scene.omega.half_angle
    c = float(y @ ax)
    if c >= np.cos(a):
        return y
    perp = y - c * ax
    perp /= np.linalg.norm(perp)
    return np.cos(a) * ax + np.sin(a) * perp


def _farthest_direction(scene: Scene, Y):
    """Direction of the cap minimising ``x . Y`` (where an oval with focus Y is lowest)."""
    y = Y / np.linalg.norm(Y)
    ax, a = scene.omega.axis, scene.omega.half_angle
    perp = y - (y @ ax) * ax
    nrm = np.linalg.norm(perp)
    if nrm < 1e-15:
        perp = np.zeros_like(ax)
        perp[0 if abs(ax[0]) < 0.9 else 1] = 1.0
        perp -= (perp @ ax) * ax
        nrm = np.linalg.norm(perp)
    return np.cos(a) * ax - np.sin(a) * perp / nrm


def anchor_b(scene: Scene, Y):
    """``b`` for which the oval with focus ``Y`` has minimum radius ``c1`` over the cap."""
    return float(support_b(Y, scene.c1 * _farthest_direction(scene, Y), scene.kappa))


def _bracket(Y, kappa):
    r = np.linalg.norm(Y)
    return kappa * r * (1.0 + 1e-9), r * (1.0 - 1e-9)


def _coordinate_energy(i, b_i, u, ctx):
    """``G_i`` with oval ``i`` at ``b_i`` and the other ovals frozen (cached)."""
    x, wf, radius, n, rp, gp, rq, gq = ctx
    Y = u.foci[i]
    k2 = u.kappa**2
    t = x @ Y
    yy = Y @ Y
    sq = np.sqrt(np.maximum((b_i - k2 * t) ** 2 - (1.0 - k2) * (b_i * b_i - k2 * yy), 0.0))
    ri = (b_i * b_i - k2 * yy) / (b_i - k2 * t + sq)
    gi = (k2 * ri / sq)[:, None] * Y
    top = ri >= rp
    s_top, _, _ = _split(x, ri, rp, gi, gp, radius, n)
    s_mid, _, _ = _split(x, rp, ri, gp, gi, radius, n)
    share = np.where(top, s_top, np.where(ri >= rq, 1.0 - s_mid, 0.0))
    return float(np.dot(wf, share))


def _others_context(i, u, x, wf, R, Gr, radius, n):
    Ri = R.copy()
    Ri[:, i] = -np.inf
    if u.size == 2:
        p = np.full(len(x), 1 - i)
        rows = np.arange(len(x))
        return (x, wf, radius, n, R[rows, p], Gr[rows, p], np.full(len(x), -np.inf), np.zeros_like(x))
    p, q = _top_two(Ri)
    rows = np.arange(len(x))
    return (x, wf, radius, n, R[rows, p], Gr[rows, p], R[rows, q], Gr[rows, q])


def _max_rel(G, w):
    return float(np.max(np.abs(G - w) / w))


def _sweep_solve(u, scene, quad, cfg, t0, trace, start_iter=0):
    x = quad.nodes
    wf = quad.weights * scene.f(x)
    w = scene.target.weights
    N = u.size
    R, Gr = u.radii_and_gradients(x)
    it = start_iter
    res = _max_rel(tracing_energy(u, scene, quad).G, w)
    history = [res]
    while res > cfg.tol_energy and it < cfg.max_outer_iterations:
        it += 1
        for i in range(1, N):
            ctx = _others_context(i, u, x, wf, R, Gr, quad.cell_radius, scene.n)
            lo, hi = _bracket(u.foci[i], u.kappa)
            g = lambda bi: _coordinate_energy(i, bi, u, ctx) - w[i]  # noqa: E731
            g_hi = g(hi)
            if g_hi < 0:
                raise InfeasibleRadialBounds(f"target {i} cannot collect its weight with admissible ovals")
            cur = u.b[i]
            if abs(g(cur)) <= 1e-3 * cfg.tol_energy * w[i]:
                continue
            a_, b_ = (lo, cur) if g(cur) > 0 else (cur, hi)
            u.b[i] = optimize.brentq(g, a_, b_, xtol=cfg.b_tol * hi, rtol=4 * np.finfo(float).eps)
            sub = DiscreteRefractor(u.kappa, u.foci[i:i + 1], u.b[i:i + 1])
            r_i, g_i = sub.radii_and_gradients(x)
            R[:, i], Gr[:, i] = r_i[:, 0], g_i[:, 0]
        res = _max_rel(tracing_energy(u, scene, quad).G, w)
        trace.append((it, res, time.perf_counter() - t0))
        history.append(res)
        if len(history) > cfg.stall_window and res > cfg.stall_factor * history[-1 - cfg.stall_window]:
            return it, res, True
    return it, res, False


def _newton_solve(u, scene, quad, target_tol, max_iter, t0, trace, start_iter=0, halvings=12, stall=4):
    """Damped Newton on ``b_2..b_N``; ends on the best iterate seen.

    Stops early once the residual has not improved by 1% over ``stall``
    iterations (the smoothed energies have a quadrature noise floor).
    """
    w = scene.target.weights
    lo = np.array([_bracket(Y, u.kappa)[0] for Y in u.foci])
    hi = np.array([_bracket(Y, u.kappa)[1] for Y in u.foci])
    it = start_iter
    G, J = energy_jacobian(u, scene, quad)
    res = _max_rel(G, w)
    best_b, best = u.b.copy(), res
    history = [res]
    while res > target_tol and it < start_iter + max_iter:
        it += 1
        r = (G - w)[1:]
        A = J[1:, 1:]
        try:
            step = np.linalg.solve(A + 1e-14 * np.abs(A).max() * np.eye(len(r)), -r)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(A, -r, rcond=None)[0]
        base, norm0 = u.b.copy(), np.linalg.norm(r / w[1:])
        alpha = 1.0
        for _ in range(halvings):
            trial = base.copy()
            trial[1:] = np.clip(base[1:] + alpha * step, lo[1:], hi[1:])
            u.b = trial
            G_new, J_new = energy_jacobian(u, scene, quad)
            ok = np.all(G_new[1:] > 0) and np.linalg.norm((G_new - w)[1:] / w[1:]) <= (1 - 1e-4 * alpha) * norm0
            if ok:
                break
            alpha *= 0.5
        else:
            u.b = base
            break
        G, J = G_new, J_new
        res = _max_rel(G, w)
        trace.append((it, res, time.perf_counter() - t0))
        if res < best:
            best_b, best = u.b.copy(), res
        history.append(res)
        if len(history) > stall and best > 0.99 * min(history[:-stall]):
            break
    u.b = best_b
    return it, best


def initial_refractor(scene: Scene, mode="below"):
    """Starting ovals for the solver.

    "below": ``b_1`` anchored, every other oval shrunk to the bottom of its
    admissible range so its cell is empty (the sweep only ever raises b).
    "aimed": every oval reaches the common radius ``r0`` in the direction of
    its own focus, where it is then the highest; every cell is non-empty.
    """
    tgt = scene.target
    Y = tgt.points
    b = np.empty(tgt.size)
    b[0] = anchor_b(scene, Y[0])
    if mode == "below":
        for i in range(1, tgt.size):
            b[i] = _bracket(Y[i], scene.kappa)[0]
    else:
        probe = DiscreteRefractor(scene.kappa, Y[:1], b[:1])
        d0 = _aim_direction(scene, Y[0])
        r0 = float(probe.radii(d0)[0])
        for i in range(1, tgt.size):
            b[i] = support_b(Y[i], r0 * _aim_direction(scene, Y[i]), scene.kappa)
    return DiscreteRefractor(scene.kappa, Y.copy(), b)


def _sweeps(scene, quad, cfg, t0, trace, it):
    """Monotone sweep from the empty-cell start; refines the quadrature once on a stall."""
    u = initial_refractor(scene, "below")
    it, res, stalled = _sweep_solve(u, scene, quad, cfg, t0, trace, it)
    if stalled and res > cfg.tol_energy:
        quad = _refine(scene, quad)
        it, res, _ = _sweep_solve(u, scene, quad, cfg, t0, trace, it)
    return u, it, res, quad


def solve(scene: Scene, config: SolverConfig = SolverConfig(), quad: CapQuadrature = None):
    """Choose ``b`` so every target receives its weight to relative ``tol_energy``.

    ``b_1`` is pinned so the smallest radius of oval 1 over the cap is ``c1``;
    the remaining ``b_i`` are found by the monotone coordinate sweep (each
    ``b_i`` set by root finding so ``G_i = w_i`` with the others frozen), by
    damped Newton on the smoothed energies from the aimed start, or by Newton
    falling back to the sweep when Newton stalls ("hybrid").
    """
    if not isinstance(scene.target, DiscretePoints):
        raise InvalidParameters("the solver needs a discrete target")
    cfg = config
    if quad is None:
        quad = (default_quadrature(scene.omega, scene.target.size) if cfg.quadrature_resolution is None
                else _quad_from(scene, cfg.quadrature_resolution, cfg.n_phi))
    t0 = time.perf_counter()
    trace = []
    N = scene.target.size
    w = scene.target.weights
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if N == 1:
            u = initial_refractor(scene)
            it, res = 0, 0.0
        else:
            res = np.inf
            if cfg.method in ("newton", "hybrid"):
                u = initial_refractor(scene, "aimed")
                it, res = _newton_solve(u, scene, quad, cfg.tol_energy, cfg.max_outer_iterations, t0, trace)
            if cfg.method == "sweep" or (cfg.method == "hybrid" and res > cfg.tol_energy):
                u, it, res, quad = _sweeps(scene, quad, cfg, t0, trace, len(trace))
        if res > cfg.tol_energy:
            raise NotConverged(f"max relative energy residual {res:.3g} > {cfg.tol_energy}", trace)
        if cfg.polish_tol is not None and N > 1:
            it, res = _newton_solve(u, scene, quad, cfg.polish_tol, 50, t0, trace, it)
        G = tracing_energy(u, scene, quad).G
    umax = float(u.envelope(quad.nodes)[0].max())
    if umax > scene.c2:
        raise InfeasibleRadialBounds(f"refractor reaches radius {umax:.6g} > c2 = {scene.c2}")
    return SolveResult(u, G, (G - w) / w, it, trace, quad)


def _quad_from(scene, resolution, n_phi):
    from .quadrature import cap_quadrature
    return cap_quadrature(scene.omega, resolution, n_phi)


def _refine(scene, quad):
    from .quadrature import cap_quadrature
    if scene.n == 2:
        return cap_quadrature(scene.omega, 2 * quad.size)
    n_phi = 512
    return cap_quadrature(scene.omega, 2 * (quad.size // n_phi), n_phi)
