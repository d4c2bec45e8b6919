import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cliff_lhmp.errors import EmptyReportError, InvalidArgumentError
from cliff_lhmp.evaluation import (
    EvalConfig,
    ade,
    aggregate_ensemble,
    displacement_errors,
    evaluate_method,
    fde,
    parameter_sweep,
    success_ratio,
)
from cliff_lhmp.mapping import GridSpec, map_from_mixtures
from cliff_lhmp.motion import State, mixture
from cliff_lhmp.predictor import PredictedTrajectory, PredictionConfig
from cliff_lhmp.synthetic import generate_synthetic, make_scenario


def line(n, dx=1.0, offset=(0.0, 0.0)):
    k = np.arange(1, n + 1, dtype=float)
    return np.column_stack([k * dx + offset[0], np.zeros(n) + offset[1]])


def pred_from(xy, truncated=False):
    states = tuple(State(float(x), float(y), 1.0, 0.0) for x, y in xy)
    return PredictedTrajectory(states, truncated, len(states) + 1 if truncated else None)


# ------------------------------------------------------------------ metrics


def test_identical_scores_zero():
    gt = line(10)
    assert ade(gt, gt, 10) == 0.0 and fde(gt, gt, 10) == 0.0


def test_constant_offset():
    gt = line(10)
    assert ade(line(10, offset=(0.3, 0.4)), gt, 10) == pytest.approx(0.5, abs=1e-15)
    assert fde(line(10, offset=(0.3, 0.4)), gt, 10) == pytest.approx(0.5, abs=1e-15)


def test_truncated_prediction_scored_over_predicted_steps():
    gt = line(10)
    pred = pred_from(line(5, offset=(0.0, 1.0)), truncated=True)
    assert ade(pred, gt, 10) == 1.0
    assert len(displacement_errors(pred, gt, 10)) == 5
    # the final error is the one at the last predicted step
    pred2 = pred_from(np.vstack([line(4), [[5.0, 2.0]]]), truncated=True)
    assert fde(pred2, gt, 10) == 2.0
    assert ade(pred2, gt, 10) == pytest.approx(0.4)


def test_fde_is_final_step():
    gt = line(6)
    pred = line(6) + np.array([[0, 0.1], [0, 0.2], [0, 0.1], [0, 0.3], [0, 0.0], [0, 2.0]])
    assert fde(pred, gt, 6) == 2.0


def test_horizon_limits_steps():
    gt = line(10)
    pred = line(10) + np.column_stack([np.zeros(10), np.arange(10.0)])
    assert fde(pred, gt, 3) == 2.0
    assert ade(pred, gt, 3) == 1.0
    # 1.2 s at 0.4 s steps is exactly 3 steps
    assert len(displacement_errors(pred, gt, 1.2, 0.4)) == 3


def test_no_overlap_is_undefined():
    assert math.isnan(ade(pred_from([], truncated=True), line(5), 5))
    assert math.isnan(fde(line(5), np.zeros((0, 2)), 5))


def test_aggregation_examples():
    assert aggregate_ensemble([2.0], "best_k") == 2.0
    assert aggregate_ensemble([3, 1, 2], "best_k") == 1
    assert aggregate_ensemble([3, 1, 2], "mean_k") == 2
    assert math.isnan(aggregate_ensemble([], "mean_k"))
    assert aggregate_ensemble([math.nan, 4.0], "mean_k") == 4.0
    with pytest.raises(InvalidArgumentError):
        aggregate_ensemble([1.0], "median")


def test_success_ratio_examples():
    full = pred_from(line(5))
    cut = pred_from(line(2), truncated=True)
    assert success_ratio([[full, full]] * 3, 5) == 1.0
    assert success_ratio([[cut]] * 3, 5) == 0.0
    ens = [[cut, full]] * 42 + [[cut, cut]] * 8
    assert success_ratio(ens, 5) == pytest.approx(0.84)


arrays = st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)), min_size=1, max_size=20)


@given(arrays, arrays, st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_translation_invariance(p, g, ox, oy):
    p, g = np.array(p), np.array(g)
    h = 30.0
    a = displacement_errors(p, g, h)
    b = displacement_errors(p + [ox, oy], g + [ox, oy], h)
    np.testing.assert_allclose(a, b, atol=1e-9)
    if a.size:
        assert ade(p, g, h) == pytest.approx(float(a.mean()), abs=1e-12)
        assert fde(p, g, h) == a[-1]


@given(arrays, arrays, st.integers(0, 20))
def test_truncation_preserves_surviving_errors(p, g, cut):
    p, g = np.array(p), np.array(g)
    full = displacement_errors(p, g, 30.0)
    short = displacement_errors(p[: max(len(p) - cut, 0)], g, 30.0)
    np.testing.assert_array_equal(short, full[: len(short)])


@given(st.lists(st.floats(0, 100), min_size=1, max_size=30))
def test_best_k_not_above_mean_k(scores):
    assert aggregate_ensemble(scores, "best_k") <= aggregate_ensemble(scores, "mean_k") + 1e-9


def test_cvm_fde_non_decreasing_on_curve():
    # straight line from the tangent point against a circle of radius 10
    t = np.arange(1, 31, dtype=float)
    gt = np.column_stack([10 * np.sin(t / 10), -10 * np.cos(t / 10)])
    pred = np.column_stack([t, np.full_like(t, -10.0)])
    f = [fde(pred, gt, h) for h in range(1, 31)]
    assert all(b >= a for a, b in zip(f, f[1:]))


def test_eval_config_validation():
    with pytest.raises(InvalidArgumentError):
        EvalConfig(horizons_s=(2.0, 1.0))
    with pytest.raises(InvalidArgumentError):
        EvalConfig(aggregation="top")
    with pytest.raises(InvalidArgumentError):
        EvalConfig(k=0)


# --------------------------------------------------------------- harness


@pytest.fixture(scope="module")
def corridor():
    sc = make_scenario("corridor")
    train = generate_synthetic(sc, 80, np.random.default_rng(0))
    test = generate_synthetic(sc, 15, np.random.default_rng(1))
    from cliff_lhmp.mapping import build_map

    return build_map(train, sc.extent), test


def test_cvm_exact_on_noise_free_lines():
    sc = make_scenario("corridor", heading_noise=0.0)
    data = generate_synthetic(sc, 10, np.random.default_rng(3))
    rep = evaluate_method(None, data, "cvm", PredictionConfig(), EvalConfig(horizons_s=(1, 5, 10, 20)))
    for agg in ("mean_k", "best_k"):
        for r in rep.tables[agg]:
            assert r.ade_mean == pytest.approx(0.0, abs=1e-9)
            assert r.fde_mean == pytest.approx(0.0, abs=1e-9)
            assert r.n_trajectories == 10


def test_evaluate_report_shape_and_determinism(corridor):
    cmap, test = corridor
    cfg = EvalConfig(horizons_s=(2, 5, 10))
    a = evaluate_method(cmap, test, "cliff_lhmp", PredictionConfig(k=4), cfg)
    b = evaluate_method(cmap, test, "cliff_lhmp", PredictionConfig(k=4), cfg, workers=2)
    assert a == b
    assert a.method == "cliff_lhmp" and a.n_evaluated == 15
    assert [r.horizon_s for r in a.records] == [2.0, 5.0, 10.0]
    for r_mean, r_best in zip(a.tables["mean_k"], a.tables["best_k"]):
        assert r_best.ade_mean <= r_mean.ade_mean + 1e-12
        assert 0.0 <= r_mean.success_ratio <= 1.0
        assert r_mean.ade_mean >= 0 and r_mean.fde_std >= 0
    assert len(a.rows()) == 6


def test_evaluate_errors(corridor):
    cmap, test = corridor
    with pytest.raises(EmptyReportError, match="empty-report"):
        evaluate_method(cmap, test, "cvm", PredictionConfig(), EvalConfig(min_gt_duration_s=1e6))
    with pytest.raises(InvalidArgumentError):
        evaluate_method(None, test, "cliff_lhmp")
    with pytest.raises(InvalidArgumentError):
        evaluate_method(cmap, test, "lstm")


def test_sweep_labels_reports(corridor):
    cmap, test = corridor
    reps = parameter_sweep(cmap, test, PredictionConfig(k=2), "rs", [0.5, 2.0], EvalConfig(horizons_s=(5,)))
    assert [(r.axis, r.axis_value) for r in reps] == [("r_s", 0.5), ("r_s", 2.0)]
    with pytest.raises(InvalidArgumentError):
        parameter_sweep(cmap, test, PredictionConfig(), "gamma", [1.0])
    with pytest.raises(InvalidArgumentError):
        parameter_sweep(cmap, test, PredictionConfig(), "beta", [])


def test_beta_sweep_on_sparse_map():
    # coverage only along an eastbound strip; the flow turns north near its end
    g = GridSpec(0, 0, 1, 20, 20)
    east = mixture([(1.0, 0.0, 1.0, np.diag([0.01, 1e-4]))])
    north = mixture([(1.0, math.pi / 2, 1.0, np.diag([0.01, 1e-4]))])
    cells = {(i, j): east for i in range(16) for j in range(3)}
    cells.update({(i, j): north for i in range(16, 19) for j in range(20)})
    cmap = map_from_mixtures(g, cells)
    sc = make_scenario("l-corner")
    test = generate_synthetic(sc, 20, np.random.default_rng(5))
    reps = parameter_sweep(cmap, test, PredictionConfig(k=5), "beta", [1.0, 10.0], EvalConfig(horizons_s=(25,)))
    assert reps[0].at(25).success_ratio > reps[1].at(25).success_ratio
