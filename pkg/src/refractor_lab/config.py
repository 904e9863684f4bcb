"""Centralised numerical tolerances."""
from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    residual: float = 1e-10          # defining-equation residuals, identities
    gradient: float = 1e-6           # first-derivative finite-difference checks
    hessian: float = 1e-4            # second-derivative finite-difference checks
    unit_norm: float = 1e-12
    tiny_discriminant: float = 1e-14  # below this (but >= 0) a warning is issued
    tie: float = 1e-12               # envelope argmax ties
    support: float = 1e-9            # envelope support violations
    angular: float = 1e-9            # ray-to-point matching for discrete targets
    concavity: float = 1e-8
    hc_margin: float = 1e-10
    stability_drift: float = 0.05    # N vs 4N sample drift of empirical constants


TOL = Tolerances()
