import math

import numpy as np
import pytest

from refractor_lab.analysis import (
    LEMMAS,
    _ctx,
    default_delta,
    estimate_holder_gradient,
    estimate_holder_map,
    eval_3_4,
    gen_3_4,
    holder_alpha,
    measure_condition_check,
    run_lemma_suite,
    solved_example,
    verify_lemmas,
)
from refractor_lab.errors import HypothesisNotSatisfied, InvalidParameters
from refractor_lab.hypotheses import bent_disk_scene
from refractor_lab.refractor_solver import DiscreteRefractor, initial_refractor
from refractor_lab.scene import DiscretePoints

EXACT = ("3.1", "3.2", "3.3", "4.1", "4.4")


@pytest.fixture(scope="module")
def reports3(scene3):
    return verify_lemmas(scene3, LEMMAS, samples=800, seed=0)


@pytest.mark.parametrize("lemma_id", LEMMAS)
def test_every_suite_passes_on_example(reports3, lemma_id):
    rep = reports3[lemma_id]
    assert rep.violations == 0, rep.to_dict()
    assert rep.passes
    if rep.kind != "exact":
        assert rep.drift < 0.05 and math.isfinite(rep.empirical_constant)


def test_exact_suites_report_margins(reports3):
    for lid in EXACT:
        rep = reports3[lid]
        assert rep.kind == "exact" and rep.worst_margin is not None
        assert rep.samples_tested > 0


def test_lemma_3_2_grid_and_manifold():
    rep = run_lemma_suite("3.2", None, samples=5000, seed=4)
    assert rep.violations == 0
    assert rep.constants["grid_points"] > 0 and rep.constants["equality_samples"] == 5000


def test_lemma_3_3_on_example_scene(scene3):
    rep = run_lemma_suite("3.3", scene3, samples=10_000, seed=1)
    assert rep.violations == 0 and rep.samples_tested >= 9000


def test_lemma_3_4_endpoints_have_no_quadratic_term(scene3):
    ctx = _ctx("3.4", scene3)
    rng = np.random.default_rng(0)
    cfg = gen_3_4(scene3, rng, 400, ctx)
    for lam in (0.0, 1.0):
        cfg["lam"] = np.full(400, lam)
        out = eval_3_4(scene3, cfg, ctx)
        ok = np.isfinite(out["quad"])
        assert ok.sum() > 100
        assert np.all(out["quad"][ok] == 0.0)
        assert np.all(out["margin"][ok] >= -1e-12)


def test_suites_are_deterministic(scene2):
    a = run_lemma_suite("4.2", scene2, samples=400, seed=3).to_dict()
    b = run_lemma_suite("4.2", scene2, samples=400, seed=3).to_dict()
    assert a == b


def test_unknown_lemma_rejected(scene3):
    with pytest.raises(InvalidParameters):
        run_lemma_suite("9.9", scene3)


def test_gate_refuses_scene_failing_HC(scene3):
    bowl = bent_disk_scene(scene3, 0.09)
    with pytest.raises(HypothesisNotSatisfied):
        run_lemma_suite("3.4", bowl, samples=200)
    # a suite without hypotheses still runs
    assert run_lemma_suite("4.1", bowl, samples=200).violations == 0


# ------------------------------------------------------------------ Holder


def test_holder_exponent():
    assert holder_alpha(2) == pytest.approx(1 / 3)
    assert holder_alpha(3) == pytest.approx(1 / 7)


def test_single_oval_holder_is_trivial(scene3):
    d = scene3.with_target(DiscretePoints(np.array([[0.0, 0.0, scene3.target.M]]),
                                          np.array([scene3.source_energy()])))
    u = initial_refractor(d)
    rep = estimate_holder_map(u, d, budget=300, C1=0.0)
    assert max(rep.modulus) == 0.0 and rep.passes
    g = estimate_holder_gradient(u, d, budget=300)
    # inside one cell the gradient is smooth: the modulus shrinks like t, faster than t^alpha
    assert g.ratios[-1] < g.ratios[0]
    assert g.best_fit_exponent == pytest.approx(1.0, abs=0.1)


def test_holder_map_bounded_on_solved_example(scene2):
    d, u = solved_example(scene2, 64)
    rep = estimate_holder_map(u, d, budget=500)
    assert rep.passes and len(rep.scales) == 6
    assert all(s2 == pytest.approx(s1 / 2) for s1, s2 in zip(rep.scales, rep.scales[1:]))
    assert rep.excluded_ties >= 0 and all(g <= t for g, t in zip(rep.gated_pairs, rep.pairs_per_scale))


def test_lipschitz_sanity_of_solved_refractor(scene2):
    d, u = solved_example(scene2, 16)
    rng = np.random.default_rng(0)
    x = d.omega.sample_uniform(rng, 4000)
    r, _ = u.envelope(x)
    i, j = rng.integers(0, 4000, (2, 20000))
    dx = np.linalg.norm(x[i] - x[j], axis=-1)
    keep = dx > 1e-9
    lip = np.max(np.abs(r[i] - r[j])[keep] / dx[keep])
    assert lip < 10 * d.c2


# ------------------------------------------------------- measure condition


def test_measure_condition_large_and_small_sigma(scene2):
    # odd N keeps the axis (one of the centres) inside a cell
    d, u = solved_example(scene2, 15)
    delta = default_delta(d)
    rep = measure_condition_check(u, d, sigma_list=[4.0, 1e-7], centers=4, probe=2000)
    total = sum(rep.cell_areas)
    # sigma beyond the cap: every cell is reached
    assert rep.measures[0] == pytest.approx(total)
    assert math.isfinite(rep.ratios[0])
    # tiny balls around interior points meet a single cell
    assert rep.measures[1] <= max(rep.cell_areas) + 1e-12
    assert delta > 0


def test_measure_condition_bounded_on_solved_example(scene2):
    d, u = solved_example(scene2, 16)
    rep = measure_condition_check(u, d, centers=4, probe=2000)
    assert rep.passes and math.isfinite(rep.ratio_sup)


def test_measure_condition_needs_discrete_target(scene2):
    u = DiscreteRefractor(0.5, [[0.0, scene2.target.M]], [12.0])
    with pytest.raises(InvalidParameters):
        measure_condition_check(u, scene2)
