import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import optimize

from conftest import random_unit, unit
from refractor_lab.errors import ComplexRoot, DomainError
from refractor_lab.hypotheses import C_of_kappa, bent_disk_scene, check_HC
from refractor_lab.sphere_curves import (
    SphericalSegment,
    TargetCurve,
    beta,
    curve_point,
    lambda_of_gamma,
    m_of_v,
    mx0_of_v,
    phi_concavity_check,
    t_of_v,
    target_curve_point,
    v_of_m,
)

seeds = st.integers(0, 2**32 - 1)
dims = st.sampled_from([2, 3])


def cone_direction(rng, x0, kappa, margin=0.02):
    while True:
        m = random_unit(rng, len(x0))
        if m @ x0 >= kappa + margin:
            return m


def random_segment(rng, n):
    kappa = rng.uniform(0.2, 0.8)
    x0 = random_unit(rng, n)
    return SphericalSegment(x0, cone_direction(rng, x0, kappa), cone_direction(rng, x0, kappa), kappa)


def test_beta_endpoints():
    seg = random_segment(np.random.default_rng(3), 3)
    np.testing.assert_allclose(beta(np.array([0.0, 1.0]), seg), 1.0, rtol=1e-12)
    m, bb, bh = curve_point(np.array([0.0, 1.0]), seg)
    np.testing.assert_allclose(m[0], seg.m_bar, atol=1e-12)
    np.testing.assert_allclose(m[1], seg.m_hat, atol=1e-12)
    assert (bb[0], bh[0]) == pytest.approx((1.0, 0.0), abs=1e-12)


def test_beta_symmetric_midpoint_against_bisection():
    kappa = 0.5
    x0 = np.array([0.0, 0.0, 1.0])
    a = math.radians(40.0)
    mb = np.array([math.sin(a), 0.0, math.cos(a)])
    mh = np.array([0.0, math.sin(a), math.cos(a)])  # perpendicular to mb about x0
    seg = SphericalSegment(x0, mb, mh, kappa)
    xi = 0.5 * (mb + mh) - x0 / kappa
    root = optimize.bisect(lambda bt: np.linalg.norm(x0 / kappa + bt * xi) - 1.0, 1e-9, 1.0, xtol=1e-15)
    assert float(beta(0.5, seg)) == pytest.approx(root, rel=1e-12)


@given(seeds, dims)
def test_curve_point_properties(seed, n):
    rng = np.random.default_rng(seed)
    seg = random_segment(rng, n)
    lam = rng.uniform(0.0, 1.0, 50)
    m, bb, bh = curve_point(lam, seg)
    b = beta(lam, seg)
    assert np.all((b > 0) & (b <= 1 + 1e-12))
    np.testing.assert_allclose(np.linalg.norm(m, axis=-1), 1.0, atol=1e-12)
    assert np.all(m @ seg.x0 >= seg.kappa - 1e-12)
    np.testing.assert_allclose(bb, (1 - lam) * b, rtol=1e-15)
    np.testing.assert_allclose(bh, lam * b, rtol=1e-15)
    assert np.all(bb >= 0) and np.all(bh >= 0) and np.all(bb + bh <= 1 + 1e-12)


@given(seeds, dims)
def test_curve_symmetry_under_endpoint_swap(seed, n):
    rng = np.random.default_rng(seed)
    seg = random_segment(rng, n)
    rev = SphericalSegment(seg.x0, seg.m_hat, seg.m_bar, seg.kappa)
    lam = rng.uniform(0.0, 1.0, 20)
    np.testing.assert_allclose(curve_point(lam, seg)[0], curve_point(1 - lam, rev)[0], atol=1e-12)


@given(seeds, dims)
def test_beta_deficit_is_quadratic_in_separation(seed, n):
    # 1 - beta(lambda) >= C lambda (1 - lambda) |m_bar - m_hat|^2 with C depending only on kappa;
    # the ratio stays bounded below by a positive constant on the sampled segments
    rng = np.random.default_rng(seed)
    seg = random_segment(rng, n)
    d2 = np.sum((seg.m_bar - seg.m_hat) ** 2)
    if d2 < 1e-6:
        return
    lam = np.linspace(0.05, 0.95, 19)
    ratio = (1 - beta(lam, seg)) / (lam * (1 - lam) * d2)
    assert np.all(ratio > 0.0)
    assert ratio.min() >= 0.5 * seg.kappa * (1 - seg.kappa) / 4


def test_degenerate_segment_is_constant():
    x0 = np.array([0.0, 1.0])
    m = unit([0.2, 1.0])
    seg = SphericalSegment(x0, m, m, 0.5)
    pts, _, _ = curve_point(np.linspace(0, 1, 7), seg)
    np.testing.assert_array_equal(pts, np.broadcast_to(m, pts.shape))


def test_segment_outside_cone_rejected():
    with pytest.raises(DomainError):
        SphericalSegment(np.array([0.0, 1.0]), np.array([1.0, 0.0]), np.array([0.0, 1.0]), 0.5)


def test_complex_root_reported():
    # bypass the constructor check to exercise the guard in beta
    seg = object.__new__(SphericalSegment)
    for k, v in dict(x0=np.array([0.0, 1.0]), m_bar=np.array([3.0, 0.0]), m_hat=np.array([2.9, 0.0]),
                     kappa=0.5).items():
        object.__setattr__(seg, k, v)
    with pytest.raises(ComplexRoot):
        beta(0.5, seg)


# ---------------------------------------------------------------- target curves


def test_target_curve_endpoints_and_disk(scene3):
    rng = np.random.default_rng(0)
    X0 = np.array([0.1, -0.2, 1.4])
    disk = scene3.target
    Yb, Yh = disk.sample_uniform(rng, 2)
    curve = TargetCurve(X0, Yb, Yh, disk, scene3.kappa)
    lam = np.linspace(0, 1, 41)
    Y = target_curve_point(lam, curve)
    np.testing.assert_allclose(Y[0], Yb, atol=1e-9)
    np.testing.assert_allclose(Y[-1], Yh, atol=1e-9)
    np.testing.assert_allclose(Y[:, -1], disk.M, atol=1e-9)
    assert np.all(np.linalg.norm(Y[:, :-1], axis=-1) <= disk.R * (1 + 1e-12))


def test_target_curve_constant_when_endpoints_coincide(scene3):
    X0 = np.array([0.0, 0.0, 1.5])
    Y = np.array([1.0, 2.0, scene3.target.M])
    pts = target_curve_point(np.linspace(0, 1, 5), TargetCurve(X0, Y, Y, scene3.target, scene3.kappa))
    np.testing.assert_allclose(pts, np.broadcast_to(Y, pts.shape), atol=1e-9)


# ---------------------------------------------------------------- transfer coordinates


@given(seeds, dims)
def test_v_and_m_are_inverse(seed, n):
    rng = np.random.default_rng(seed)
    kappa = rng.uniform(0.2, 0.8)
    X0 = random_unit(rng, n) * rng.uniform(1.0, 2.0)
    m = cone_direction(rng, unit(X0), kappa, 0.0)
    v = v_of_m(m, X0, kappa)
    assert abs(v @ unit(X0)) <= 1e-12
    np.testing.assert_allclose(m_of_v(v, X0, kappa), m, atol=1e-10)
    assert float(mx0_of_v(v, X0, kappa)) == pytest.approx(m @ unit(X0), abs=1e-10)


def test_v_zero_at_x0_and_boundary_disk():
    kappa = 0.5
    X0 = np.array([0.0, 0.0, 1.5])
    assert np.linalg.norm(v_of_m(unit(X0), X0, kappa)) == 0.0
    r = kappa * 1.5 / math.sqrt(1 - kappa**2)
    v = np.array([r, 0.0, 0.0])
    m = m_of_v(v, X0, kappa)
    assert m @ unit(X0) == pytest.approx(kappa, abs=1e-12)
    assert float(mx0_of_v(v, X0, kappa)) == pytest.approx(kappa, abs=1e-12)
    with pytest.raises(DomainError):
        t_of_v(1.01 * v, X0, kappa)


@given(seeds, dims)
def test_straight_segment_in_v_is_the_curve(seed, n):
    rng = np.random.default_rng(seed)
    seg = random_segment(rng, n)
    X0 = seg.x0 * rng.uniform(1.0, 2.0)
    vb, vh = v_of_m(seg.m_bar, X0, seg.kappa), v_of_m(seg.m_hat, X0, seg.kappa)
    g = rng.uniform(0.0, 1.0, 20)
    mv = m_of_v((1 - g)[:, None] * vb + g[:, None] * vh, X0, seg.kappa)
    lam = lambda_of_gamma(g, vb, vh, X0, seg.kappa)
    np.testing.assert_allclose(curve_point(lam, seg)[0], mv, atol=1e-10)


# ---------------------------------------------------------------- concavity


def test_phi_concave_on_example(scene3, scene2):
    assert phi_concavity_check(np.array([0.1, 0.0, 1.5]), scene3, samples=32).passes
    assert phi_concavity_check(np.array([0.1, 1.5]), scene2, samples=32).passes


def test_phi_concavity_fails_on_bowl_target(scene3):
    bowl = bent_disk_scene(scene3, 0.09)
    rep = phi_concavity_check(np.array([0.0, 0.0, 1.5]), bowl, samples=32)
    assert not rep.passes and rep.witness is not None
    assert not check_HC(bowl, 2000).passes


def test_C_of_kappa_values():
    assert C_of_kappa(0.5) == pytest.approx(0.1009252, abs=5e-8)
    assert C_of_kappa(1 - 1e-9) == pytest.approx(math.sqrt(5) / 2 - 1, abs=1e-6)
