import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_unit, unit
from refractor_lab.errors import InvalidParameters, TieBoundary
from refractor_lab.geom_core import support_b
from refractor_lab.raytrace import (
    BOUNDARY,
    TIR,
    Ray,
    irradiance_histogram,
    refract,
    surface_normal,
    trace,
    trace_many,
)
from refractor_lab.refractor_solver import DiscreteRefractor, SolverConfig, initial_refractor, solve, tracing_energy
from refractor_lab.scene import DiscretePoints, discretize_target, with_weights

seeds = st.integers(0, 2**32 - 1)


def point_scene(scene, Y, fractions=None):
    Y = np.asarray(Y, float)
    fr = np.full(len(Y), 1.0 / len(Y)) if fractions is None else np.asarray(fractions, float)
    return scene.with_target(DiscretePoints(Y, fr * scene.source_energy()))


def sines(i, n, t):
    s1 = np.linalg.norm(i - (i @ n) * n)
    s2 = np.linalg.norm(t - (t @ n) * n)
    return s1, s2


@pytest.fixture(scope="module")
def solved4(scene2):
    d = with_weights(discretize_target(scene2, 4), [0.1, 0.2, 0.3, 0.4])
    return d, solve(d, SolverConfig(method="sweep"))


# ---------------------------------------------------------------- refract


def test_normal_incidence_passes_straight():
    n = np.array([0.0, 0.0, 1.0])
    np.testing.assert_allclose(refract(n, n, 0.5), n, atol=1e-15)


def test_twenty_degrees_at_half_index():
    a = math.radians(20.0)
    i = np.array([math.sin(a), 0.0, math.cos(a)])
    t = refract(i, np.array([0.0, 0.0, 1.0]), 0.5)
    assert math.degrees(math.asin(t[0])) == pytest.approx(43.16, abs=5e-3)
    assert math.asin(t[0]) == pytest.approx(math.asin(math.sin(a) / 0.5), rel=1e-14)


def test_critical_angle_and_tir():
    kappa = 0.5
    n = np.array([0.0, 1.0])
    a = math.asin(kappa)
    t = refract(np.array([math.sin(a), math.cos(a)]), n, kappa)
    assert t @ n == pytest.approx(0.0, abs=1e-7)
    b = a + 1e-6
    assert refract(np.array([math.sin(b), math.cos(b)]), n, kappa) is TIR


@given(seeds, st.sampled_from([2, 3]), st.floats(0.2, 0.9))
def test_snell_law_and_coplanarity(seed, dim, kappa):
    rng = np.random.default_rng(seed)
    n = random_unit(rng, dim)
    i = random_unit(rng, dim)
    if i @ n < 0:
        i = -i
    t = refract(i, n, kappa)
    s1 = np.linalg.norm(i - (i @ n) * n)
    if s1 > kappa * (1 + 1e-12):
        assert t is TIR
        return
    if t is TIR:
        assert s1 >= kappa * (1 - 1e-12)
        return
    _, s2 = sines(i, n, t)
    assert abs(np.linalg.norm(t) - 1.0) <= 1e-14
    assert abs(s1 - kappa * s2) <= 1e-10
    if dim == 3:
        assert abs(np.linalg.det(np.stack([i, n, t]))) <= 1e-12
    assert t @ n >= 0


def test_ray_requires_unit_direction():
    Ray(np.zeros(3), unit([1.0, 2.0, 3.0]))
    with pytest.raises(InvalidParameters):
        Ray(np.zeros(3), np.array([1.0, 1.0, 0.0]))


# ---------------------------------------------------------------- normals


def test_axis_point_normal_is_radial(scene3):
    Y = np.array([[0.0, 0.0, scene3.target.M]])
    u = initial_refractor(point_scene(scene3, Y))
    x = np.array([0.0, 0.0, 1.0])
    np.testing.assert_allclose(surface_normal(u, x), x, atol=1e-14)


def test_small_kappa_oval_is_nearly_a_sphere():
    # as kappa -> 0 the oval of the far focus tends to the sphere |X| = b
    Y = np.array([0.0, 0.0, 30.0])
    u = DiscreteRefractor(1e-4, [Y], support_b(Y[None], np.array([[0.0, 0.0, 1.5]]), 1e-4))
    x = unit([0.3, -0.2, 1.0])
    assert np.degrees(np.arccos(surface_normal(u, x) @ x)) < 1e-2


@given(seeds)
def test_normal_agrees_with_finite_differences(seed):
    from refractor_lab.hypotheses import build_example_scene
    scene = build_example_scene(0.5, 2.0, None, 1.0, 3)
    rng = np.random.default_rng(seed)
    Y = scene.target.sample_uniform(rng, 4)
    u = DiscreteRefractor(0.5, Y, support_b(Y, 1.4 * scene.omega.sample_uniform(rng, 4), 0.5))
    x = scene.omega.sample_uniform(rng, 1)[0]
    try:
        nrm = surface_normal(u, x)
    except TieBoundary:
        return
    h = 1e-6
    e1 = unit(np.cross(x, random_unit(rng, 3)))
    e2 = np.cross(x, e1)
    for e in (e1, e2):
        xp, xm = unit(x + h * e), unit(x - h * e)
        if u.envelope(xp)[1] != u.envelope(xm)[1]:
            return
        tangent = (u.envelope(xp)[0] * xp - u.envelope(xm)[0] * xm) / (2 * h)
        assert abs(nrm @ unit(tangent)) <= 1e-6
    assert nrm @ x > 0


def test_tie_point_normal_raises(scene2):
    M = scene2.target.M
    u = DiscreteRefractor(0.5, [[-3.0, M], [3.0, M]], [0.0, 0.0])
    u.b[:] = support_b(u.foci, np.array([0.0, 1.3]), 0.5)
    with pytest.raises(TieBoundary):
        surface_normal(u, np.array([0.0, 1.0]))
    with pytest.raises(TieBoundary):
        trace(u, point_scene(scene2, u.foci), np.array([0.0, 1.0]))


# ---------------------------------------------------------------- trace


@given(seeds)
def test_single_oval_rays_hit_the_focus(seed):
    from refractor_lab.hypotheses import build_example_scene
    scene = build_example_scene(0.5, 2.0, None, 1.0, 3)
    rng = np.random.default_rng(seed)
    Y = scene.target.sample_uniform(rng, 1)
    sc = point_scene(scene, Y)
    u = initial_refractor(sc)
    x = scene.omega.sample_uniform(rng, 1)[0]
    res = trace(u, sc, Ray(np.zeros(3), x))
    assert res.assigned_target_index == 0
    np.testing.assert_allclose(res.hit_target, Y[0])
    assert res.focus_distance <= 1e-8 * np.linalg.norm(Y[0] - res.hit_surface)


def test_reciprocity_of_refraction_and_focus_direction(solved4):
    d, res = solved4
    u = res.refractor
    x = d.omega.sample_uniform(np.random.default_rng(7), 2000)
    out = trace_many(u, d, x)
    ok = ~out["tie"]
    aim = u.foci[out["active"]] - out["X"]
    aim /= np.linalg.norm(aim, axis=-1, keepdims=True)
    assert np.max(np.linalg.norm(out["direction"][ok] - aim[ok], axis=-1)) <= 1e-8
    assert np.all(out["focus_distance"][ok] <= 1e-8 * out["focus_scale"][ok])


def test_continuous_target_hit_lies_on_sigma(scene3):
    d = discretize_target(scene3, 4)
    u = initial_refractor(d)
    out = trace_many(u, scene3, scene3.omega.sample_uniform(np.random.default_rng(1), 500))
    hit = out["hit"][out["assigned"] >= 0]
    np.testing.assert_allclose(hit[:, -1], scene3.target.M, atol=1e-9)


# ---------------------------------------------------------------- histogram


def test_one_oval_fraction_is_one(scene3):
    sc = point_scene(scene3, [[0.0, 0.0, scene3.target.M]])
    h = irradiance_histogram(initial_refractor(sc), sc, 20_000, seed=3)
    assert h.fractions[0] == 1.0 and h.tir == 0 and h.missed == 0


def test_symmetric_pair_fractions_equal(scene2):
    M = scene2.target.M
    sc = point_scene(scene2, [[-3.0, M], [3.0, M]])
    u = DiscreteRefractor(0.5, sc.target.points, [0.0, 0.0])
    u.b[:] = support_b(u.foci, np.array([0.0, 1.3]), 0.5)
    h = irradiance_histogram(u, sc, 200_000, seed=5)
    assert abs(h.fractions[0] - h.fractions[1]) <= 3 * math.hypot(*h.stderr)


def test_solved_refractor_histogram(solved4):
    d, res = solved4
    h = irradiance_histogram(res.refractor, d, 1_000_000, seed=11)
    assert h.assigned_fraction >= 0.999 and h.tir == 0
    w = d.target.weights / d.target.weights.sum()
    assert np.all(np.abs(h.fractions - w) <= 3 * h.stderr + 1e-3)
    # quadrature energies and the Monte Carlo estimate agree within the combined error
    G = tracing_energy(res.refractor, d, res.quadrature).G / d.source_energy()
    assert np.all(np.abs(h.fractions - G) <= 3 * h.stderr + 1e-9)


def test_histogram_reproducible_across_threads(solved4):
    d, res = solved4
    a = irradiance_histogram(res.refractor, d, 50_000, seed=2, batch=8192, threads=1)
    b = irradiance_histogram(res.refractor, d, 50_000, seed=2, batch=8192, threads=4)
    np.testing.assert_array_equal(a.counts, b.counts)
    assert (a.boundary, a.missed, a.tir) == (b.boundary, b.missed, b.tir)


def test_boundary_rays_kept_apart(scene2):
    M = scene2.target.M
    sc = point_scene(scene2, [[-3.0, M], [3.0, M]])
    u = DiscreteRefractor(0.5, sc.target.points, [0.0, 0.0])
    u.b[:] = support_b(u.foci, np.array([0.0, 1.3]), 0.5)
    out = trace_many(u, sc, np.array([[0.0, 1.0], unit([0.1, 1.0])]))
    assert out["assigned"][0] == BOUNDARY and out["assigned"][1] >= 0
