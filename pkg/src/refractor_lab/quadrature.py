"""Quadrature on spherical caps.

n = 2: midpoint rule on the polar angle (equal cells of width ``h``).
n = 3: equal-area grid made of rings of equal ``cos`` width, each cut into the
same number of azimuthal cells at ``phi_k = 2 pi (k + 1/2) / n_phi``.  With
``n_phi`` a multiple of ``m`` the grid is invariant under rotations by
``2 pi / m`` about the cap axis, which keeps symmetric problems symmetric.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scene import Cap


@dataclass(frozen=True)
class CapQuadrature:
    nodes: np.ndarray      # (K, n) unit vectors
    weights: np.ndarray    # (K,) cell measures, summing to the cap measure
    cell_radius: float     # half-width (n=2) or equivalent-disk radius (n=3) of a cell

    @property
    def size(self):
        return self.weights.size

    def integrate(self, values):
        return float(np.dot(self.weights, values))


def cap_quadrature(cap: Cap, resolution=None, n_phi=512):
    """Build the grid; ``resolution`` is the cell count (n=2) or ring count (n=3)."""
    a = cap.half_angle
    if cap.n == 2:
        K = int(resolution or 4096)
        h = 2.0 * a / K
        psi = -a + h * (np.arange(K) + 0.5)
        return CapQuadrature(cap.from_polar(psi), np.full(K, h), 0.5 * h)
    n_r = int(resolution or 80)
    edges = np.linspace(1.0, math.cos(a), n_r + 1)
    c_mid = 0.5 * (edges[:-1] + edges[1:])
    phi = 2.0 * math.pi * (np.arange(n_phi) + 0.5) / n_phi
    psi = np.repeat(np.arccos(c_mid), n_phi)
    nodes = cap.from_polar(psi, np.tile(phi, n_r))
    area = cap.measure() / (n_r * n_phi)
    return CapQuadrature(nodes, np.full(n_r * n_phi, area), math.sqrt(area / math.pi))


def default_quadrature(cap: Cap, n_targets=1):
    """Grid with at least ~64 cells per target, never coarser than the defaults."""
    if cap.n == 2:
        return cap_quadrature(cap, max(4096, 64 * n_targets))
    rings = max(80, int(math.ceil(64 * n_targets / 512)))
    return cap_quadrature(cap, rings, 512)


def smooth_fraction(delta, radius, n):
    """Share of a cell lying on the positive side of a straight boundary.

    ``delta`` is the signed distance from the node to the boundary.  In n = 2
    the cell is an interval of half-width ``radius``; in n = 3 it is treated as
    a disk of that radius (circular-segment area).
    """
    t = np.clip(np.asarray(delta) / radius, -1.0, 1.0)
    if n == 2:
        return 0.5 + 0.5 * t
    return 1.0 - (np.arccos(t) - t * np.sqrt(1.0 - t * t)) / math.pi


def smooth_fraction_slope(delta, radius, n):
    """Derivative of :func:`smooth_fraction` with respect to ``delta``."""
    t = np.asarray(delta) / radius
    inside = np.abs(t) < 1.0
    if n == 2:
        # a boundary on a cell edge sits at |t| = 1 for both neighbours: each takes half the slope,
        # the mean of the one-sided derivatives, instead of both dropping it
        eta = 1e-6  # the linearised distance is exact only to O(radius^2)
        return (0.5 / radius) * np.clip((1.0 + eta - np.abs(t)) / (2.0 * eta), 0.0, 1.0)
    tc = np.clip(t, -1.0, 1.0)
    return np.where(inside, 2.0 * np.sqrt(1.0 - tc * tc) / (math.pi * radius), 0.0)
