"""Curves on the sphere seen from the exterior point ``x0 / kappa``.

``[m_bar, m_hat]_{x0}`` is the radial projection, from ``x0/kappa``, of the
chord between ``m_bar`` and ``m_hat`` onto the unit sphere.  It replaces the
geodesic between the two directions in the concavity and tube conditions.
The transfer map ``v = T_{X0}(m)`` turns these curves into straight segments.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .config import TOL
from .errors import ComplexRoot, DomainError
from .geom_core import transfer_vector

_dot = lambda a, b: np.einsum("...i,...i->...", a, b)  # noqa: E731


@dataclass(frozen=True)
class SphericalSegment:
    x0: np.ndarray
    m_bar: np.ndarray
    m_hat: np.ndarray
    kappa: float

    def __post_init__(self):
        for name in ("x0", "m_bar", "m_hat"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if min(np.min(_dot(self.m_bar, self.x0)), np.min(_dot(self.m_hat, self.x0))) < self.kappa - TOL.residual:
            raise DomainError("segment endpoints must satisfy m . x0 >= kappa")

    @property
    def degenerate(self):
        return bool(np.array_equal(self.m_bar, self.m_hat))


@dataclass(frozen=True)
class TargetCurve:
    X0: np.ndarray
    Y_bar: np.ndarray
    Y_hat: np.ndarray
    target: Any  # anything with visibility_s(X, m)
    kappa: float

    def __post_init__(self):
        for name in ("X0", "Y_bar", "Y_hat"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    def segment(self):
        x0 = self.X0 / np.linalg.norm(self.X0)
        mb = (self.Y_bar - self.X0) / np.linalg.norm(self.Y_bar - self.X0)
        mh = (self.Y_hat - self.X0) / np.linalg.norm(self.Y_hat - self.X0)
        return SphericalSegment(x0, mb, mh, self.kappa)


def beta(lam, seg: SphericalSegment):
    """Scale ``beta`` such that ``x0/kappa + beta (m_lambda - x0/kappa)`` is on the sphere.

    Uses the conjugate form ``(1 - k^2) / (k (-x0.xi + sqrt(disc)))`` of the
    nearer root; ``|xi| >= 1/kappa - 1`` so neither form can lose the root,
    but the conjugate one avoids subtracting nearly equal numbers.
    """
    lam = np.asarray(lam, dtype=float)
    k = seg.kappa
    m_lam = (1.0 - lam)[..., None] * seg.m_bar + lam[..., None] * seg.m_hat
    xi = m_lam - seg.x0 / k
    p = _dot(seg.x0, xi)
    disc = p * p - (1.0 - k * k) * _dot(xi, xi)
    if np.any(disc < -TOL.residual * _dot(xi, xi)):
        raise ComplexRoot("the line through x0/kappa misses the unit sphere")
    # tangency (disc == 0) is accepted: beta is then the double root
    return (1.0 - k * k) / (k * (-p + np.sqrt(np.maximum(disc, 0.0))))


def curve_point(lam, seg: SphericalSegment):
    """Return ``(m(lambda), beta_bar, beta_hat)``."""
    lam = np.asarray(lam, dtype=float)
    if seg.degenerate:
        m = np.broadcast_to(seg.m_bar, lam.shape + seg.m_bar.shape).copy()
        return m, 1.0 - lam, lam
    b = beta(lam, seg)
    bb, bh = (1.0 - lam) * b, lam * b
    c = seg.x0 / seg.kappa
    m = c + bb[..., None] * (seg.m_bar - c) + bh[..., None] * (seg.m_hat - c)
    return m, bb, bh


def target_curve_point(lam, curve: TargetCurve):
    """``Y(lambda) = X0 + s_{X0}(m(lambda)) m(lambda)``; raises VisibilityFailure off target."""
    m, _, _ = curve_point(lam, curve.segment())
    s = curve.target.visibility_s(curve.X0, m)
    return curve.X0 + np.asarray(s)[..., None] * m


def v_of_m(m, X0, kappa):
    m = np.asarray(m, dtype=float)
    x0 = np.asarray(X0) / np.linalg.norm(X0)
    if np.any(_dot(m, x0) < kappa - TOL.residual):
        raise DomainError("m . x0 must be at least kappa")
    return transfer_vector(m, X0, kappa)


def _check_v(v, X0, kappa):
    X0 = np.asarray(X0, dtype=float)
    r0 = np.linalg.norm(X0)
    v = np.asarray(v, dtype=float)
    if np.any(np.abs(_dot(v, X0 / r0)) > TOL.residual * r0):
        raise DomainError("v must be orthogonal to x0")
    lim = kappa * kappa * r0 * r0 / (1.0 - kappa * kappa)
    vv = _dot(v, v)
    if np.any(vv > lim * (1.0 + TOL.residual)):
        raise DomainError("|v|^2 exceeds kappa^2 |X0|^2 / (1 - kappa^2)")
    return r0, np.minimum(vv, lim)


def t_of_v(v, X0, kappa):
    r0, vv = _check_v(v, X0, kappa)
    k2 = kappa * kappa
    return (1.0 - k2) / (kappa * (r0 + np.sqrt(k2 * r0 * r0 - (1.0 - k2) * vv)))


def mx0_of_v(v, X0, kappa):
    """Closed form of ``<m(v), x0>``."""
    r0, vv = _check_v(v, X0, kappa)
    k2 = kappa * kappa
    return (vv + r0 * np.sqrt(k2 * r0 * r0 - (1.0 - k2) * vv)) / (kappa * (vv + r0 * r0))


def m_of_v(v, X0, kappa):
    X0 = np.asarray(X0, dtype=float)
    t = t_of_v(v, X0, kappa)
    return X0 / (kappa * np.linalg.norm(X0)) + t[..., None] * (np.asarray(v) - X0)


def lambda_of_gamma(gamma, v_bar, v_hat, X0, kappa):
    """Parameter change taking the straight segment in ``v`` to the ``lambda`` parametrisation."""
    gamma = np.asarray(gamma, dtype=float)
    tb, th = t_of_v(v_bar, X0, kappa), t_of_v(v_hat, X0, kappa)
    return gamma * tb / ((1.0 - gamma) * th + gamma * tb)


def phi_value(v, X0, target, kappa, mu=0.0):
    """``(1/s_{X0}(m(v)) + mu/|X0|) / t(v)``."""
    s = target.visibility_s(X0, m_of_v(v, X0, kappa))
    return (1.0 / s + mu / np.linalg.norm(X0)) / t_of_v(v, X0, kappa)


@dataclass
class ConcavityReport:
    passes: bool
    max_second_difference: float
    min_chord_margin: float
    samples: int
    witness: dict | None = None

    def to_dict(self):
        return {
            "passes": self.passes,
            "max_second_difference": self.max_second_difference,
            "min_chord_margin": self.min_chord_margin,
            "samples": self.samples,
            "witness": self.witness,
        }


def phi_concavity_check(X0, scene, samples=64, n_lambda=21, mu=0.0, seed=0):
    """Sample segments ``[v_bar, v_hat]`` and test concavity of ``Phi`` along them.

    Endpoints come from target points visible from ``X0``.  Concavity means
    every second central difference along a segment is ``<= 0``; the report
    keeps the largest one (passes iff it is at most the concavity tolerance)
    and, as a cross-check, the smallest chord margin
    ``Phi(v_gamma) - (1-gamma) Phi(v_bar) - gamma Phi(v_hat)``.
    """
    X0 = np.asarray(X0, dtype=float)
    rng = np.random.default_rng(seed)
    kappa = scene.kappa
    target = scene.target.surface_for_curves()
    gam = np.linspace(0.0, 1.0, n_lambda)
    worst, worst_chord, witness = -np.inf, np.inf, None
    for _ in range(samples):
        Yb, Yh = target.sample_uniform(rng, 2)
        vb = v_of_m((Yb - X0) / np.linalg.norm(Yb - X0), X0, kappa)
        vh = v_of_m((Yh - X0) / np.linalg.norm(Yh - X0), X0, kappa)
        vg = (1.0 - gam)[:, None] * vb + gam[:, None] * vh
        phi = phi_value(vg, X0, target, kappa, mu)
        d2 = phi[:-2] - 2.0 * phi[1:-1] + phi[2:]
        chord = phi - ((1.0 - gam) * phi[0] + gam * phi[-1])
        if d2.max() > worst:
            worst = float(d2.max())
            witness = {"Y_bar": Yb.tolist(), "Y_hat": Yh.tolist(), "gamma": float(gam[1 + d2.argmax()])}
        worst_chord = min(worst_chord, float(chord.min()))
    passes = worst <= TOL.concavity
    return ConcavityReport(passes, worst, worst_chord, samples, None if passes else witness)
