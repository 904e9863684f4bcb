"""File formats: JSON reports and inputs, CSV tables, OBJ / polyline meshes.

Floats go through ``repr`` (shortest string that round-trips, at most 17
significant digits), so re-reading a file gives back the same doubles.
Non-finite numbers become ``null``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .hypotheses import _plain
from .quadrature import cap_quadrature
from .refractor_solver import DiscreteRefractor
from .scene import Scene


def _finite(v):
    if isinstance(v, dict):
        return {str(k): _finite(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_finite(x) for x in v]
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def to_json(obj):
    """Deterministic JSON text: sorted keys, two-space indent, trailing newline."""
    if hasattr(obj, "to_dict"):
        obj = obj.to_dict()
    return json.dumps(_finite(_plain(obj)), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj):
    Path(path).write_text(to_json(obj))
    return Path(path)


def read_json(path):
    return json.loads(Path(path).read_text())


def load_scene(path) -> Scene:
    return Scene.from_dict(read_json(path))


def load_refractor(path) -> DiscreteRefractor:
    return DiscreteRefractor.from_dict(read_json(path))


def fmt(v):
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])
    return Path(path)


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def file_sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def text_sha256(text):
    return hashlib.sha256(text.encode()).hexdigest()


# ------------------------------------------------------------------ meshes


def surface_points(u: DiscreteRefractor, scene: Scene, resolution=None, n_phi=64):
    """Points ``u(x) x`` of the refractor on a structured cap grid.

    n = 2: a polyline ordered by polar angle, shape (K, 2).
    n = 3: the axis point followed by ``rings x n_phi`` points, shape (1 + rings n_phi, 3).
    """
    cap = scene.omega
    if scene.n == 2:
        x = cap_quadrature(cap, resolution or 512).nodes
        x = np.vstack([cap.from_polar(np.array([-cap.half_angle])), x, cap.from_polar(np.array([cap.half_angle]))])
    else:
        rings = resolution or 32
        psi = np.repeat(cap.half_angle * np.arange(1, rings + 1) / rings, n_phi)
        phi = np.tile(2.0 * math.pi * np.arange(n_phi) / n_phi, rings)
        x = np.vstack([cap.axis[None, :], cap.from_polar(psi, phi)])
    r, _ = u.envelope(x)
    return r[:, None] * x


def mesh_faces(rings, n_phi):
    """Triangles (0-based) for the axis-plus-rings layout of :func:`surface_points`."""
    faces = [(0, 1 + j, 1 + (j + 1) % n_phi) for j in range(n_phi)]
    for k in range(rings - 1):
        a0 = 1 + k * n_phi
        b0 = a0 + n_phi
        for j in range(n_phi):
            j1 = (j + 1) % n_phi
            faces.append((a0 + j, b0 + j, b0 + j1))
            faces.append((a0 + j, b0 + j1, a0 + j1))
    return faces


def write_obj(path, u: DiscreteRefractor, scene: Scene, resolution=32, n_phi=64):
    """Wavefront OBJ of the radial graph (n = 3)."""
    if scene.n != 3:
        raise ValueError("OBJ meshes are for n = 3; use write_polyline")
    P = surface_points(u, scene, resolution, n_phi)
    lines = ["# refractor surface: radial graph over the source cap"]
    lines += ["v %s %s %s" % tuple(fmt(float(c)) for c in p) for p in P]
    lines += ["f %d %d %d" % (a + 1, b + 1, c + 1) for a, b, c in mesh_faces(resolution, n_phi)]
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def write_polyline(path, u: DiscreteRefractor, scene: Scene, resolution=512):
    """CSV polyline ``(x, z)`` of the refractor profile (n = 2)."""
    P = surface_points(u, scene, resolution)
    return write_csv(path, ["x", "z"], [(float(a), float(b)) for a, b in P])


def write_mesh(path_stem, u: DiscreteRefractor, scene: Scene):
    """OBJ for n = 3, polyline CSV for n = 2; returns the written path."""
    stem = Path(path_stem)
    if scene.n == 3:
        return write_obj(stem.with_suffix(".obj"), u, scene)
    return write_polyline(stem.with_suffix(".csv"), u, scene)
