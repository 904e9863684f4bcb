"""Descartes-oval kernel.

An oval with focus ``Y`` and parameter ``b`` is the set
``{X : |X| + kappa |X - Y| = b}`` with ``0 < kappa < 1`` and
``kappa |Y| < b < |Y|``.  Along a direction ``x`` its polar radius is the
smaller root of

    (1 - kappa^2) r^2 - 2 (b - kappa^2 x.Y) r + (b^2 - kappa^2 |Y|^2) = 0,

i.e. ``rho = B - sqrt(B^2 - C)`` with ``B = (b - kappa^2 x.Y)/(1 - kappa^2)``
and ``C = (b^2 - kappa^2 |Y|^2)/(1 - kappa^2)``.  Only this minus branch is
ever used; the plus branch belongs to the other sheet ``|X| - kappa|X - Y| = b``.

All functions broadcast over leading axes: directions have shape ``(..., n)``,
foci and support points either ``(n,)`` or ``(..., n)``.  ``x`` is not
renormalised, so the same formulas give the smooth extension of ``h`` to
``|x|`` slightly different from 1 that finite-difference checks rely on.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .config import TOL
from .errors import (
    DegenerateDecomposition,
    DomainError,
    InvalidOval,
    NegativeDiscriminant,
    RefractionConditionViolated,
)


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def _norm(a):
    return np.sqrt(_dot(a, a))


@dataclass(frozen=True)
class OvalParams:
    focus: np.ndarray
    b: float
    kappa: float

    def __post_init__(self):
        object.__setattr__(self, "focus", np.asarray(self.focus, dtype=float))
        validate_oval(self.focus, self.b, self.kappa)


@dataclass(frozen=True)
class OvalScalars:
    B: np.ndarray
    C: np.ndarray
    Delta: np.ndarray


def validate_kappa(kappa):
    if not 0.0 < kappa < 1.0:
        raise InvalidOval(f"kappa must lie in (0, 1), got {kappa}")


def validate_oval(Y, b, kappa):
    validate_kappa(kappa)
    ynorm = _norm(np.asarray(Y, dtype=float))
    b = np.asarray(b, dtype=float)
    if np.any(b <= kappa * ynorm) or np.any(b >= ynorm):
        raise InvalidOval("oval parameter must satisfy kappa|Y| < b < |Y|")


def discriminant(t, b, ynorm2, kappa):
    """``(b - k^2 t)^2 - (1 - k^2)(b^2 - k^2 |Y|^2)`` as a function of ``t = x.Y``."""
    k2 = kappa * kappa
    return (b - k2 * t) ** 2 - (1.0 - k2) * (b * b - k2 * ynorm2)


def _sqrt_discriminant(delta, b):
    scale = np.asarray(b, dtype=float) ** 2
    if np.any(delta < -TOL.tiny_discriminant * scale):
        raise NegativeDiscriminant("direction does not meet the oval (negative discriminant)")
    if np.any(delta < TOL.tiny_discriminant * scale):
        warnings.warn("near-degenerate oval discriminant; scene is likely inadmissible",
                      RuntimeWarning, stacklevel=3)
    return np.sqrt(np.maximum(delta, 0.0))


def rho(x, Y, b, kappa):
    """Polar radius of ``O(Y, b)`` along ``x`` (no admissibility check).

    Evaluated as ``C / (B + sqrt(B^2 - C))``, algebraically equal to
    ``B - sqrt(B^2 - C)`` but free of cancellation when ``C << B^2``.
    """
    x = np.asarray(x, dtype=float)
    Y = np.asarray(Y, dtype=float)
    k2 = kappa * kappa
    t = _dot(x, Y)
    ynorm2 = _dot(Y, Y)
    sq = _sqrt_discriminant(discriminant(t, b, ynorm2, kappa), b)
    return (b * b - k2 * ynorm2) / (b - k2 * t + sq)


def oval_radius(x, oval: OvalParams):
    return rho(x, oval.focus, oval.b, oval.kappa)


def oval_residual(x, r, Y, b, kappa):
    """``r + kappa |r x - Y| - b``; zero when ``r x`` lies on ``O(Y, b)``."""
    X = np.asarray(r)[..., None] * np.asarray(x)
    return r + kappa * _norm(X - Y) - b


def drho_db(x, Y, b, kappa):
    """Partial derivative of the polar radius with respect to ``b``."""
    k2 = kappa * kappa
    t = _dot(x, Y)
    sq = _sqrt_discriminant(discriminant(t, b, _dot(Y, Y), kappa), b)
    return (1.0 - k2 * (b - t) / sq) / (1.0 - k2)


def support_b(Y, X0, kappa):
    """Oval parameter of the oval with focus ``Y`` through ``X0``."""
    return _norm(X0) + kappa * _norm(np.asarray(X0) - np.asarray(Y))


def refraction_margin(X0, Y, kappa):
    """``x0 . (Y - X0)/|Y - X0| - kappa``; non-negative iff ``Y`` is in the cone at ``X0``."""
    X0 = np.asarray(X0, dtype=float)
    d = np.asarray(Y, dtype=float) - X0
    return _dot(X0, d) / (_norm(X0) * _norm(d)) - kappa


def decompose(Y, X0):
    """Write ``Y = X0 + s m`` with ``s > 0`` and ``|m| = 1``."""
    d = np.asarray(Y, dtype=float) - np.asarray(X0, dtype=float)
    s = _norm(d)
    if np.any(s == 0.0):
        raise DegenerateDecomposition("Y coincides with X0")
    return s, d / np.asarray(s)[..., None]


def h_value(x, Y, X0, kappa, check=True):
    """Radius along ``x`` of the oval with focus ``Y`` passing through ``X0``."""
    validate_kappa(kappa)
    if check and np.any(refraction_margin(X0, Y, kappa) < -TOL.residual):
        raise RefractionConditionViolated("focus lies outside the refraction cone at X0")
    return rho(x, Y, support_b(Y, X0, kappa), kappa)


def bc_scalars(x, Y, X0, kappa):
    decompose(Y, X0)
    k2 = kappa * kappa
    b = support_b(Y, X0, kappa)
    Y = np.asarray(Y, dtype=float)
    B = (b - k2 * _dot(x, Y)) / (1.0 - k2)
    C = (b * b - k2 * _dot(Y, Y)) / (1.0 - k2)
    return OvalScalars(B=B, C=C, Delta=(1.0 - k2) ** 2 * (B * B - C))


def bc_identities(x, Y, X0, kappa):
    """Both sides of the expansions of ``b - k^2 x.Y`` and ``b^2 - k^2|Y|^2`` in ``(s, m)``.

    Returns ``((lhs1, rhs1), (lhs2, rhs2))``.
    """
    k2 = kappa * kappa
    X0 = np.asarray(X0, dtype=float)
    Y = np.asarray(Y, dtype=float)
    s, m = decompose(Y, X0)
    r0 = _norm(X0)
    x0 = X0 / np.asarray(r0)[..., None]
    b = r0 + kappa * s
    lhs1 = b - k2 * _dot(x, Y)
    rhs1 = r0 * (1.0 - k2 * _dot(x, x0)) + kappa * s * (1.0 - kappa * _dot(x, m))
    lhs2 = b * b - k2 * _dot(Y, Y)
    rhs2 = (1.0 - k2) * r0 * r0 + 2.0 * kappa * s * r0 * (1.0 - kappa * _dot(x0, m))
    return (lhs1, rhs1), (lhs2, rhs2)


def f_BC(B, C):
    B = np.asarray(B, dtype=float)
    C = np.asarray(C, dtype=float)
    if np.any(C > B * B):
        raise DomainError("f(B, C) requires C <= B^2")
    return B - np.sqrt(B * B - C)


def slack_update(Bbar, Cbar, B, C, E):
    """Upper bound ``f(Bbar, Cbar) - E / (B + sqrt(B^2 - C) - f(Bbar, Cbar))``.

    Valid when ``C - Cbar <= 2 (B - Bbar) f(Bbar, Cbar) - E`` and
    ``f(Bbar, Cbar) <= B``.
    """
    fbar = f_BC(Bbar, Cbar)
    if np.any(np.asarray(E) < 0):
        raise DomainError("slack E must be non-negative")
    return fbar - E / (B + np.sqrt(B * B - C) - fbar)


def _h_parts(x, Y, X0, kappa):
    x = np.asarray(x, dtype=float)
    Y = np.asarray(Y, dtype=float)
    b = support_b(Y, X0, kappa)
    t = _dot(x, Y)
    sq = _sqrt_discriminant(discriminant(t, b, _dot(Y, Y), kappa), b)
    k2 = kappa * kappa
    h = (b * b - k2 * _dot(Y, Y)) / (b - k2 * t + sq)
    return x, Y, b, t, sq, h


def grad_h_x(x, Y, X0, kappa):
    """Gradient of ``h`` in ``x``: ``kappa^2 h Y / sqrt(Delta(x.Y))``."""
    x, Y, b, t, sq, h = _h_parts(x, Y, X0, kappa)
    return (kappa * kappa * h / sq)[..., None] * Y


def hess_h_x(x, Y, X0, kappa):
    """Hessian of ``h`` in ``x``; a scalar multiple of ``Y (x) Y``."""
    x, Y, b, t, sq, h = _h_parts(x, Y, X0, kappa)
    k2 = kappa * kappa
    coef = k2 * k2 * h / (sq * sq) * (1.0 + (b - k2 * t) / sq)
    return coef[..., None, None] * (Y[..., :, None] * Y[..., None, :])


def _db_dY(Y, X0, kappa):
    d = np.asarray(X0, dtype=float) - Y
    return -kappa * d / _norm(d)[..., None]


def _focus_derivatives(x, Y, X0, kappa):
    """Return ``(h, sqrt(Delta), dDelta/dY, dh/dY)`` with ``X0`` held fixed."""
    x, Y, b, t, sq, h = _h_parts(x, Y, X0, kappa)
    if np.any(_norm(np.asarray(X0) - Y) == 0.0):
        raise DegenerateDecomposition("Y coincides with X0")
    k2 = kappa * kappa
    db = _db_dY(Y, X0, kappa)
    inner = db - k2 * x
    bb = np.asarray(b)[..., None]
    ddelta = 2.0 * (b - k2 * t)[..., None] * inner - (1.0 - k2) * (2.0 * bb * db - 2.0 * k2 * Y)
    dh = (inner - 0.5 * ddelta / sq[..., None]) / (1.0 - k2)
    return h, sq, ddelta, dh


def grad_h_Y(x, Y, X0, kappa):
    """Gradient of ``h`` with respect to the focus, ``X0`` held fixed."""
    return _focus_derivatives(x, Y, X0, kappa)[3]


def mixed_h_Yx(x, Y, X0, kappa):
    """Mixed second derivatives; entry ``[..., k, i]`` is d^2 h / dY_k dx_i."""
    h, sq, ddelta, dh = _focus_derivatives(x, Y, X0, kappa)
    Y = np.asarray(Y, dtype=float)
    k2 = kappa * kappa
    n = Y.shape[-1]
    sq_ = sq[..., None, None]
    Yi = Y[..., None, :]
    return (k2 * dh[..., :, None] * Yi / sq_
            + k2 * h[..., None, None] * np.eye(n) / sq_
            - 0.5 * k2 * h[..., None, None] * Yi * ddelta[..., :, None] / sq_ ** 3)


def tangential_grad_h(x, Y, X0, kappa):
    """Projection of the gradient of ``h`` onto the tangent space of the sphere at ``x``."""
    g = grad_h_x(x, Y, X0, kappa)
    x = np.asarray(x, dtype=float)
    return g - _dot(g, x)[..., None] * x


def transfer_vector(m, X0, kappa):
    """``kappa |X0| (m - <m, x0> x0) / (1 - kappa <m, x0>)``, the tangential gradient at ``x0``."""
    X0 = np.asarray(X0, dtype=float)
    r0 = _norm(X0)
    x0 = X0 / np.asarray(r0)[..., None]
    c = _dot(m, x0)
    return (kappa * r0 / (1.0 - kappa * c))[..., None] * (m - c[..., None] * x0)


def delta_lower_bound_check(Y, X0, kappa, epsilon):
    """Minimum of ``Delta(x.Y)`` over ``|x| <= 1 + epsilon``.

    ``Delta(t) = kappa^2 (kappa^2 t^2 - 2 b t + b^2 + (1 - kappa^2)|Y|^2)`` is a
    parabola with vertex at ``t = b / kappa^2``, so the minimum over
    ``|t| <= (1 + epsilon)|Y|`` sits at ``min(b / kappa^2, (1 + epsilon)|Y|)``.
    """
    Y = np.asarray(Y, dtype=float)
    b = float(support_b(Y, X0, kappa))
    ynorm = float(_norm(Y))
    t_star = min(b / kappa**2, (1.0 + epsilon) * ynorm)
    k2 = kappa * kappa
    value = k2 * ((b - t_star) ** 2 + (1.0 - k2) * (ynorm**2 - t_star**2))
    return {"min_value": float(value), "argmin_t": float(t_star), "b": b, "passes": bool(value > 0.0)}
