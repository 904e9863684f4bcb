"""Scene description: source cap, source density, radial shell and target.

The last coordinate is the vertical axis throughout.  In ``n = 2`` a cap is
an arc of directions and a "disk" target is a horizontal segment.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy import integrate
from scipy.spatial.distance import pdist

from .config import TOL
from .errors import InvalidParameters, NotVisible, VisibilityFailure
from .geom_core import validate_kappa

_dot = lambda a, b: np.einsum("...i,...i->...", a, b)  # noqa: E731


def frame_for_axis(axis):
    """Orthonormal matrix whose last column is ``axis``."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    n = axis.size
    e = np.zeros(n)
    e[-1] = 1.0
    if np.allclose(axis, e):
        return np.eye(n)
    if np.allclose(axis, -e):
        Q = np.eye(n)
        Q[:, -1] = -e
        Q[:, 0] = -Q[:, 0]
        return Q
    # Householder reflection swapping e and axis, then fix orientation
    w = e - axis
    H = np.eye(n) - 2.0 * np.outer(w, w) / (w @ w)
    Q = H.copy()
    Q[:, 0] = -Q[:, 0] if np.linalg.det(H) < 0 else Q[:, 0]
    return Q


@dataclass(frozen=True)
class Cap:
    """Directions within ``half_angle`` of ``axis``."""
    axis: np.ndarray
    half_angle: float

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=float)
        object.__setattr__(self, "axis", a / np.linalg.norm(a))
        if not 0.0 < self.half_angle < math.pi / 2:
            raise InvalidParameters("cap half-angle must lie in (0, pi/2)")

    @property
    def n(self):
        return self.axis.size

    def polar_angle(self, x):
        return np.arccos(np.clip(_dot(np.asarray(x), self.axis), -1.0, 1.0))

    def contains(self, x, tol=1e-12):
        return _dot(np.asarray(x), self.axis) >= math.cos(self.half_angle) - tol

    def measure(self):
        if self.n == 2:
            return 2.0 * self.half_angle
        return 2.0 * math.pi * (1.0 - math.cos(self.half_angle))

    def from_polar(self, psi, phi=None):
        """Directions at polar angle ``psi`` (and azimuth ``phi`` when n = 3)."""
        psi = np.asarray(psi, dtype=float)
        if self.n == 2:
            local = np.stack([np.sin(psi), np.cos(psi)], axis=-1)
        else:
            phi = np.asarray(phi, dtype=float)
            s = np.sin(psi)
            local = np.stack([s * np.cos(phi), s * np.sin(phi), np.cos(psi) + 0 * phi], axis=-1)
        return local @ frame_for_axis(self.axis).T

    def sample_uniform(self, rng, size):
        if self.n == 2:
            return self.from_polar(rng.uniform(-self.half_angle, self.half_angle, size))
        c = rng.uniform(math.cos(self.half_angle), 1.0, size)
        return self.from_polar(np.arccos(c), rng.uniform(0.0, 2.0 * math.pi, size))

    def rim(self, k=16):
        if self.n == 2:
            return self.from_polar(np.array([-self.half_angle, self.half_angle]))
        phi = 2.0 * math.pi * np.arange(k) / k
        return self.from_polar(np.full(k, self.half_angle), phi)


@dataclass(frozen=True)
class Density:
    """Source density as a function of the polar angle from the cap axis."""
    kind: str = "uniform"
    angles: tuple = ()
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in ("uniform", "cosine", "table"):
            raise InvalidParameters(f"unknown density kind {self.kind!r}")
        if self.kind == "table":
            a, v = np.asarray(self.angles, float), np.asarray(self.values, float)
            if a.size < 2 or a.shape != v.shape or np.any(np.diff(a) <= 0) or np.any(v <= 0):
                raise InvalidParameters("table density needs increasing angles and positive values")

    def profile(self, psi):
        psi = np.asarray(psi, dtype=float)
        if self.kind == "uniform":
            return np.ones_like(psi)
        if self.kind == "cosine":
            return np.cos(psi)
        return np.interp(psi, self.angles, self.values)

    def __call__(self, x, cap: Cap):
        return self.profile(cap.polar_angle(x))

    def sup(self, cap: Cap):
        if self.kind == "table":
            inside = [v for a, v in zip(self.angles, self.values) if a <= cap.half_angle]
            return float(max(inside + [float(self.profile(cap.half_angle)), float(self.profile(0.0))]))
        return 1.0

    def total(self, cap: Cap):
        """Integral of the density over the cap."""
        a = cap.half_angle
        if cap.n == 2:
            if self.kind == "uniform":
                return 2.0 * a
            if self.kind == "cosine":
                return 2.0 * math.sin(a)
            pts = [p for p in self.angles if 0.0 < p < a]
            return 2.0 * integrate.quad(lambda p: float(self.profile(p)), 0.0, a, points=pts or None)[0]
        if self.kind == "uniform":
            return 2.0 * math.pi * (1.0 - math.cos(a))
        if self.kind == "cosine":
            return math.pi * math.sin(a) ** 2
        pts = [p for p in self.angles if 0.0 < p < a]
        f = lambda p: float(self.profile(p)) * math.sin(p)  # noqa: E731
        return 2.0 * math.pi * integrate.quad(f, 0.0, a, points=pts or None)[0]

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "table":
            d.update(angles=list(self.angles), values=list(self.values))
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], tuple(d.get("angles", ())), tuple(d.get("values", ())))


# ---------------------------------------------------------------- targets


def _raise_if_missed(s):
    if np.any(np.isnan(s)):
        raise NotVisible("direction does not meet the target")
    return s


class _Surface:
    """Shared behaviour of continuous targets."""

    def visibility_s(self, X, m):
        """Smallest ``s > 0`` with ``X + s m`` on the target; NotVisible otherwise."""
        return _raise_if_missed(self.hit(X, m))

    def surface_for_curves(self):
        return self

    @property
    def diameter(self):
        return 2.0 * self.R


@dataclass(frozen=True)
class PlanarDisk(_Surface):
    """``{(Y', M) : |Y'| <= R}``."""
    R: float
    M: float
    n: int = 3
    kind = "planar_disk"

    def __post_init__(self):
        if self.R <= 0 or self.M <= 0 or self.n not in (2, 3):
            raise InvalidParameters("planar disk needs R > 0, M > 0 and n in {2, 3}")

    def hit(self, X, m):
        X, m = np.asarray(X, float), np.asarray(m, float)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (self.M - X[..., -1]) / m[..., -1]
            Yp = X[..., :-1] + s[..., None] * m[..., :-1]
        ok = (m[..., -1] > 0) & (s > 0) & (np.sqrt(_dot(Yp, Yp)) <= self.R * (1.0 + 1e-12))
        return np.where(ok, s, np.nan)

    def height(self, yp):
        return np.full(np.shape(yp)[:-1], self.M)

    def contains(self, Y, tol=1e-9):
        Y = np.asarray(Y, float)
        return (np.abs(Y[..., -1] - self.M) <= tol * self.M) & (np.linalg.norm(Y[..., :-1], axis=-1) <= self.R + tol)

    def area(self):
        return 2.0 * self.R if self.n == 2 else math.pi * self.R**2

    def sample_uniform(self, rng, size):
        if self.n == 2:
            return np.stack([rng.uniform(-self.R, self.R, size), np.full(size, self.M)], axis=-1)
        r = self.R * np.sqrt(rng.uniform(0.0, 1.0, size))
        phi = rng.uniform(0.0, 2.0 * math.pi, size)
        return np.stack([r * np.cos(phi), r * np.sin(phi), np.full(size, self.M)], axis=-1)

    def rim(self, k=16):
        if self.n == 2:
            return np.array([[-self.R, self.M], [self.R, self.M]])
        phi = 2.0 * math.pi * np.arange(k) / k
        return np.stack([self.R * np.cos(phi), self.R * np.sin(phi), np.full(k, self.M)], axis=-1)

    def to_dict(self):
        return {"kind": self.kind, "R": self.R, "M": self.M}


@dataclass(frozen=True)
class CurvedDisk(_Surface):
    """Piece of a sphere over the disk ``|Y'| <= R``, passing through ``(0, M)``.

    ``Y_n = M - (1 - sqrt(1 - k^2 |Y'|^2)) / k``: for ``k > 0`` the rim bends
    toward the source (a bowl around it), for ``k < 0`` away from it.
    """
    R: float
    M: float
    curvature: float
    n: int = 3
    kind = "curved_disk"

    def __post_init__(self):
        if self.R <= 0 or self.M <= 0 or self.n not in (2, 3) or self.curvature == 0.0:
            raise InvalidParameters("curved disk needs R, M > 0, nonzero curvature, n in {2, 3}")
        if abs(self.curvature) * self.R >= 1.0:
            raise InvalidParameters("|curvature| * R must be < 1")

    @property
    def center(self):
        c = np.zeros(self.n)
        c[-1] = self.M - 1.0 / self.curvature
        return c

    @property
    def radius(self):
        return 1.0 / abs(self.curvature)

    def height(self, yp):
        k = self.curvature
        q = _dot(np.asarray(yp, float), np.asarray(yp, float))
        return self.M - (1.0 - np.sqrt(1.0 - k * k * q)) / k

    def hit(self, X, m):
        X, m = np.broadcast_arrays(np.asarray(X, float), np.asarray(m, float))
        d = X - self.center
        p = _dot(m, d)
        disc = p * p - (_dot(d, d) - self.radius**2)
        best = np.full(p.shape, np.nan)
        with np.errstate(invalid="ignore"):
            sq = np.sqrt(disc)
            for s in (-p + sq, -p - sq):  # larger root first so the smaller valid one wins
                Y = X + s[..., None] * m
                on_sheet = np.sign(self.curvature) * (Y[..., -1] - self.center[-1]) > 0
                ok = (disc >= 0) & (s > 0) & on_sheet & (np.linalg.norm(Y[..., :-1], axis=-1) <= self.R * (1 + 1e-12))
                best = np.where(ok, s, best)
        return best

    def contains(self, Y, tol=1e-9):
        Y = np.asarray(Y, float)
        yp = Y[..., :-1]
        inside = np.linalg.norm(yp, axis=-1) <= self.R + tol
        return inside & (np.abs(Y[..., -1] - self.height(np.where(inside[..., None], yp, 0.0))) <= tol * self.M)

    def _half_angle(self):
        return math.asin(abs(self.curvature) * self.R)

    def area(self):
        a, r = self._half_angle(), self.radius
        return 2.0 * r * a if self.n == 2 else 2.0 * math.pi * r * r * (1.0 - math.cos(a))

    def sample_uniform(self, rng, size):
        a, r = self._half_angle(), self.radius
        sgn = np.sign(self.curvature)
        if self.n == 2:
            psi = rng.uniform(-a, a, size)
            local = np.stack([np.sin(psi), sgn * np.cos(psi)], axis=-1)
        else:
            c = rng.uniform(math.cos(a), 1.0, size)
            s, phi = np.sqrt(1.0 - c * c), rng.uniform(0.0, 2.0 * math.pi, size)
            local = np.stack([s * np.cos(phi), s * np.sin(phi), sgn * c], axis=-1)
        return self.center + r * local

    def rim(self, k=16):
        base = PlanarDisk(self.R, self.M, self.n).rim(k)
        base[:, -1] = self.height(base[:, :-1])
        return base

    def to_dict(self):
        return {"kind": self.kind, "R": self.R, "M": self.M, "curvature": self.curvature}


@dataclass(frozen=True)
class DiscretePoints:
    """Finitely many target points with positive weights.

    ``surface`` optionally names the continuous target the points were drawn
    from; curve-based checks (target curves, tube measure) use it.
    """
    points: np.ndarray
    weights: np.ndarray
    surface: object = None
    kind = "discrete"

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.points, float))
        w = np.asarray(self.weights, float).reshape(-1)
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "weights", w)
        if p.shape[0] != w.size or p.shape[1] not in (2, 3) or np.any(w <= 0):
            raise InvalidParameters("discrete target needs one positive weight per point")

    @property
    def n(self):
        return self.points.shape[1]

    @property
    def size(self):
        return self.points.shape[0]

    def hit(self, X, m):
        X, m = np.asarray(X, float), np.asarray(m, float)
        X, m = np.broadcast_arrays(X, m)
        d = self.points - X[..., None, :]
        dist = np.linalg.norm(d, axis=-1)
        # chord form of the angle: arccos loses ~1e-8 near 0, above the matching tolerance
        chord = np.linalg.norm(d / dist[..., None] - m[..., None, :], axis=-1)
        ang = 2.0 * np.arcsin(np.minimum(chord / 2.0, 1.0))
        j = np.argmin(ang, axis=-1)
        best = np.take_along_axis(ang, j[..., None], -1)[..., 0]
        s = np.take_along_axis(dist, j[..., None], -1)[..., 0]
        return np.where(best <= TOL.angular, s, np.nan)

    def visibility_s(self, X, m):
        return _raise_if_missed(self.hit(X, m))

    def surface_for_curves(self):
        if self.surface is None:
            raise VisibilityFailure("discrete target has no underlying surface for curve checks")
        return self.surface

    def sample_uniform(self, rng, size):
        return self.points[rng.integers(0, self.size, size)]

    def contains(self, Y, tol=1e-9):
        Y = np.asarray(Y, float)
        return np.min(np.linalg.norm(Y[..., None, :] - self.points, axis=-1), axis=-1) <= tol

    @cached_property
    def diameter(self):
        return float(pdist(self.points).max()) if self.size > 1 else 0.0

    def rim(self, k=16):
        return self.points

    def to_dict(self):
        d = {"kind": self.kind, "points": self.points.tolist(), "weights": self.weights.tolist()}
        if self.surface is not None:
            d["surface"] = self.surface.to_dict()
        return d


def target_from_dict(d, n):
    kind = d["kind"]
    if kind == "planar_disk":
        return PlanarDisk(float(d["R"]), float(d["M"]), n)
    if kind == "curved_disk":
        return CurvedDisk(float(d["R"]), float(d["M"]), float(d["curvature"]), n)
    if kind == "discrete":
        surf = target_from_dict(d["surface"], n) if d.get("surface") else None
        return DiscretePoints(np.array(d["points"], float), np.array(d["weights"], float), surf)
    raise InvalidParameters(f"unknown target kind {kind!r}")


# ------------------------------------------------------------------ scene


@dataclass(frozen=True)
class Scene:
    n: int
    kappa: float
    c1: float
    c2: float
    omega: Cap
    density: Density = field(default_factory=Density)
    target: object = None
    seed: int = 0

    def __post_init__(self):
        if self.n not in (2, 3):
            raise InvalidParameters("dimension must be 2 or 3")
        try:
            validate_kappa(self.kappa)
        except ValueError as exc:
            raise InvalidParameters(str(exc)) from None
        if not 0.0 < self.c1 < self.c2:
            raise InvalidParameters("radial bounds must satisfy 0 < c1 < c2")
        if self.omega.n != self.n or (self.target is not None and self.target.n != self.n):
            raise InvalidParameters("cap, target and scene dimension disagree")
        if isinstance(self.target, DiscretePoints):
            total = self.source_energy()
            if abs(self.target.weights.sum() - total) > 1e-9 * total:
                raise InvalidParameters("target weights must sum to the source energy")

    def source_energy(self):
        return self.density.total(self.omega)

    def f(self, x):
        return self.density(x, self.omega)

    def sample_shell(self, rng, size, extremes=True):
        """Points of the radial shell over the cap; optionally prepends its extreme points."""
        x = self.omega.sample_uniform(rng, size)
        X = rng.uniform(self.c1, self.c2, size)[:, None] * x
        if not extremes:
            return X
        dirs = np.vstack([self.omega.axis[None, :], self.omega.rim()])
        ext = np.vstack([self.c1 * dirs, self.c2 * dirs])
        return np.vstack([ext, X])

    def with_target(self, target):
        return replace(self, target=target)

    def to_dict(self):
        return {
            "n": self.n,
            "kappa": self.kappa,
            "c1": self.c1,
            "c2": self.c2,
            "omega": {"axis": self.omega.axis.tolist(), "half_angle": self.omega.half_angle},
            "density": self.density.to_dict(),
            "target": self.target.to_dict(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        n = int(d["n"])
        return cls(
            n=n,
            kappa=float(d["kappa"]),
            c1=float(d["c1"]),
            c2=float(d["c2"]),
            omega=Cap(np.array(d["omega"]["axis"], float), float(d["omega"]["half_angle"])),
            density=Density.from_dict(d.get("density", {"kind": "uniform"})),
            target=target_from_dict(d["target"], n),
            seed=int(d.get("seed", 0)),
        )

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def discretize_target(scene: Scene, N: int, layout="auto", radius_fraction=0.5):
    """Replace a disk target by ``N`` points with equal weights.

    ``layout``: "intervals" (n = 2, midpoints of equal sub-intervals),
    "sunflower" (n = 3, Vogel spiral), "ring" (n = 3, ``N`` points on the circle
    of radius ``radius_fraction * R``); "auto" picks intervals or sunflower.
    """
    surf = scene.target.surface_for_curves() if isinstance(scene.target, DiscretePoints) else scene.target
    if N < 1:
        raise InvalidParameters("need at least one target point")
    R = surf.R
    if layout == "auto":
        layout = "intervals" if scene.n == 2 else "sunflower"
    if layout == "intervals":
        yp = (-R + (2 * np.arange(N) + 1) * R / N)[:, None]
    elif layout == "sunflower":
        k = np.arange(N) + 0.5
        r = R * np.sqrt(k / N) * (1.0 - 1e-9)
        ang = k * math.pi * (3.0 - math.sqrt(5.0))
        yp = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=-1)
    elif layout == "ring":
        ang = 2.0 * math.pi * np.arange(N) / N
        yp = radius_fraction * R * np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    else:
        raise InvalidParameters(f"unknown layout {layout!r}")
    if yp.shape[1] != scene.n - 1:
        raise InvalidParameters(f"layout {layout!r} does not fit dimension {scene.n}")
    pts = np.hstack([yp, surf.height(yp)[:, None]])
    w = np.full(N, scene.source_energy() / N)
    return scene.with_target(DiscretePoints(pts, w, surf))


def with_weights(scene: Scene, fractions):
    """Same discrete points, weights set to ``fractions`` of the source energy."""
    fr = np.asarray(fractions, float)
    fr = fr / fr.sum()
    t = scene.target
    return scene.with_target(DiscretePoints(t.points, fr * scene.source_energy(), t.surface))


def nearest_point(target, X):
    """Point of the target closest to each ``X`` (exact for disks and point sets)."""
    X = np.asarray(X, float)
    if isinstance(target, DiscretePoints):
        d = np.linalg.norm(X[..., None, :] - target.points, axis=-1)
        return target.points[np.argmin(d, axis=-1)]
    if isinstance(target, PlanarDisk):
        yp = X[..., :-1]
        r = np.linalg.norm(yp, axis=-1, keepdims=True)
        yp = np.where(r > target.R, yp * target.R / np.maximum(r, 1e-300), yp)
        return np.concatenate([yp, np.full(yp.shape[:-1] + (1,), target.M)], axis=-1)
    # sphere piece: radial projection from the centre, else the nearest rim point
    c, rad = target.center, target.radius
    d = X - c
    Y = c + rad * d / np.linalg.norm(d, axis=-1, keepdims=True)
    inside = target.contains(Y, tol=1e-9)
    yp = X[..., :-1]
    r = np.linalg.norm(yp, axis=-1, keepdims=True)
    rim_p = target.R * yp / np.maximum(r, 1e-300)
    rim = np.concatenate([rim_p, target.height(rim_p)[..., None]], axis=-1)
    return np.where(inside[..., None], Y, rim)
