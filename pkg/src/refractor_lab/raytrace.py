"""Forward verification by vector Snell refraction.

Rays leave the origin in direction ``x``, meet the envelope at ``X = u(x) x``,
refract from index ``n1`` into ``n2 = kappa n1`` and should then pass
through the focus of the active oval.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import TOL
from .errors import InvalidParameters, MissedTarget, TieBoundary
from .refractor_solver import DiscreteRefractor, EnergyVector
from .scene import DiscretePoints, Scene

_dot = lambda a, b: np.einsum("...i,...i->...", a, b)  # noqa: E731

BOUNDARY = -2
MISS = -1
HIT_TOL = 1e-8  # relative closest-approach distance accepted as a hit


class TotalInternalReflection:
    """Marker returned instead of a direction when refraction is impossible."""

    def __repr__(self):
        return "TotalInternalReflection"


TIR = TotalInternalReflection()


def refract_many(incident, normal, kappa):
    """Vectorised refraction; returns ``(directions, tir_mask)`` (NaN rows under TIR).

    ``normal`` points into the second medium and ``incident . normal >= 0``.
    """
    i = np.asarray(incident, float)
    nrm = np.asarray(normal, float)
    c = _dot(i, nrm)
    sin2 = np.maximum(1.0 - c * c, 0.0)
    tir = sin2 > kappa * kappa * (1.0 + 1e-13)  # slack so the exact critical angle refracts tangentially
    cos_t = np.sqrt(np.maximum(1.0 - sin2 / (kappa * kappa), 0.0))  # checked before use
    t = (i - c[..., None] * nrm) / kappa + cos_t[..., None] * nrm
    return np.where(tir[..., None], np.nan, t), tir


def refract(incident, normal, kappa):
    """Refracted unit direction, or ``TIR`` when ``sin(theta_i) > kappa``."""
    t, tir = refract_many(incident, normal, kappa)
    return TIR if bool(tir) else t


def _active(u: DiscreteRefractor, x, tie_tol):
    return u.active(x, tie_tol)


def normals_many(u: DiscreteRefractor, x, tie_tol=TOL.tie):
    """Outward unit normals ``(u x - grad^T u) / |.|`` of the radial graph; also the tie mask."""
    x = np.asarray(x, float)
    r, idx, g, tie = _active(u, x, tie_tol)
    gt = g - _dot(g, x)[..., None] * x
    v = r[..., None] * x - gt
    return v / np.linalg.norm(v, axis=-1, keepdims=True), r, idx, tie


def surface_normal(u: DiscreteRefractor, x, tie_tol=TOL.tie):
    nrm, _, idx, tie = normals_many(u, np.asarray(x, float), tie_tol)
    if bool(tie):
        raise TieBoundary("normal undefined on a cell boundary")
    return nrm


@dataclass(frozen=True)
class Ray:
    """A ray leaving ``origin`` in medium ``medium_index``; ``direction`` is a unit vector."""
    origin: np.ndarray
    direction: np.ndarray
    medium_index: float = 1.0

    def __post_init__(self):
        d = np.asarray(self.direction, float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise InvalidParameters("ray direction must be a unit vector")
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "origin", np.asarray(self.origin, float))


@dataclass
class TraceResult:
    hit_surface: np.ndarray
    refracted_dir: object           # unit vector or TIR
    hit_target: object              # point or None (miss)
    assigned_target_index: int | None
    focus_distance: float           # closest approach of the refracted ray to the active focus


def _closest_approach(X, t, Y):
    d = Y - X
    along = _dot(d, t)
    return np.linalg.norm(d - along[..., None] * t, axis=-1), along


def trace_many(u: DiscreteRefractor, scene: Scene, x, tie_tol=TOL.tie):
    """Trace a batch of source directions; returns a dict of per-ray arrays.

    ``assigned`` is the matched target index, ``MISS`` when no target lies on
    the refracted ray within the angular tolerance, or ``BOUNDARY`` for rays
    on a cell boundary (kept out of the histogram).
    """
    x = np.asarray(x, float)
    nrm, r, idx, tie = normals_many(u, x, tie_tol)
    X = r[..., None] * x
    t, tir = refract_many(x, nrm, u.kappa)
    Y = u.foci[idx]
    dist, along = _closest_approach(X, np.nan_to_num(t), Y)
    target = scene.target
    if isinstance(target, DiscretePoints):
        d = target.points[None, :, :] - X[:, None, :]
        cosang = np.einsum("kji,ki->kj", d, np.nan_to_num(t)) / np.linalg.norm(d, axis=-1)
        j = np.argmax(cosang, axis=-1)
        ang = np.arccos(np.clip(np.take_along_axis(cosang, j[:, None], 1)[:, 0], -1.0, 1.0))
        # arccos loses resolution near 0; use the perpendicular distance instead
        Yj = target.points[j]
        perp, _ = _closest_approach(X, np.nan_to_num(t), Yj)
        ang = np.where(ang < 1e-6, perp / np.linalg.norm(Yj - X, axis=-1), ang)
        hit_ok = ang <= HIT_TOL
        assigned = np.where(hit_ok & ~tir, j, MISS)
        hit = np.where(hit_ok[:, None], Yj, np.nan)
    else:
        s = target.hit(X, np.nan_to_num(t))
        hit = X + s[:, None] * t
        assigned = np.where(np.isnan(s) | tir, MISS, idx)
    assigned = np.where(tie, BOUNDARY, assigned)
    return {"X": X, "normal": nrm, "direction": t, "tir": tir, "active": idx, "tie": tie,
            "focus_distance": dist, "focus_scale": np.linalg.norm(Y - X, axis=-1),
            "assigned": assigned, "hit": hit}


def trace(u: DiscreteRefractor, scene: Scene, ray_direction):
    """Trace one source ray; ``ray_direction`` is a unit vector or a ``Ray`` from the origin."""
    if isinstance(ray_direction, Ray):
        if np.any(ray_direction.origin != 0.0):
            raise InvalidParameters("source rays start at the origin")
        ray_direction = ray_direction.direction
    res = trace_many(u, scene, np.asarray(ray_direction, float)[None, :])
    if res["tie"][0]:
        raise TieBoundary("ray hits a cell boundary")
    if res["tir"][0]:
        return TraceResult(res["X"][0], TIR, None, None, float("nan"))
    if res["assigned"][0] == MISS:
        raise MissedTarget("refracted ray misses every target point")
    a = int(res["assigned"][0])
    return TraceResult(res["X"][0], res["direction"][0], res["hit"][0], a, float(res["focus_distance"][0]))


# --------------------------------------------------------------- histogram


@dataclass
class HistogramResult:
    fractions: np.ndarray
    stderr: np.ndarray
    counts: np.ndarray
    num_rays: int
    boundary: int
    missed: int
    tir: int
    seed: int

    @property
    def assigned_fraction(self):
        return float(self.counts.sum() / self.num_rays)

    def as_energy(self, total):
        return EnergyVector(self.fractions * total, float(np.max(self.stderr) * total),
                            self.stderr * total, 0.0)


def batch_generator(seed, batch_index):
    """Counter-based stream for one batch: the result is independent of scheduling."""
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, 0, int(batch_index)]))


def sample_source(scene: Scene, rng, size):
    """Directions distributed with density proportional to ``f`` (rejection from uniform)."""
    fmax = scene.density.sup(scene.omega)
    out = np.empty((0, scene.n))
    while len(out) < size:
        x = scene.omega.sample_uniform(rng, 2 * (size - len(out)) + 16)
        keep = rng.uniform(0.0, fmax, len(x)) < scene.f(x)
        out = np.vstack([out, x[keep]])
    return out[:size]


def irradiance_histogram(u: DiscreteRefractor, scene: Scene, num_rays, seed=0, batch=1 << 16, threads=1,
                         dump=None):
    """Monte Carlo estimate of the energy fraction reaching each target.

    Rays are importance-sampled from ``f``; boundary rays are counted apart.
    ``stderr`` is the binomial standard error ``sqrt(p (1 - p) / num_rays)``.
    With ``dump`` (a list) the per-ray records of every batch are appended to it.
    """
    N = u.size
    n_batches = (num_rays + batch - 1) // batch

    def run(k):
        size = min(batch, num_rays - k * batch)
        rng = batch_generator(seed, k)
        x = sample_source(scene, rng, size)
        res = trace_many(u, scene, x)
        a = res["assigned"]
        counts = np.bincount(a[a >= 0], minlength=N)
        stats = (int(np.sum(a == BOUNDARY)), int(np.sum(a == MISS)), int(res["tir"].sum()))
        rec = (x, res) if dump is not None else None
        return counts, stats, rec

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(run, range(n_batches)))
    else:
        parts = [run(k) for k in range(n_batches)]
    counts = np.zeros(N, dtype=np.int64)
    boundary = missed = tir = 0
    for c, (bd, ms, tr), rec in parts:  # merged in batch order
        counts += c
        boundary, missed, tir = boundary + bd, missed + ms, tir + tr
        if dump is not None:
            dump.append(rec)
    p = counts / num_rays
    return HistogramResult(p, np.sqrt(p * (1.0 - p) / num_rays), counts, num_rays, boundary, missed, tir, seed)
