import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddpose.evaluation import (
    THRESHOLDS,
    GpsConfig,
    GtInstance,
    ScoredInstance,
    area_ranges,
    average_precision,
    evaluate,
    evaluate_gps,
    greedy_match,
    instance_gps,
)
from ddpose.iuv import AnnotatedPoint
from oracles import brute_force_eval

CFG = GpsConfig(kappa=1.0)


def _gt(points, area=5000.0):
    return GtInstance([AnnotatedPoint(0, x, y, p, u, v) for x, y, p, u, v in points], area)


def _pred_from(gt, shape=(8, 8), score=0.9, part_shift=0, uv_shift=0.0):
    part = np.zeros(shape, np.int64)
    u = np.zeros(shape)
    v = np.zeros(shape)
    for p in gt.points:
        part[p.y, p.x] = p.part + part_shift
        u[p.y, p.x] = p.u + uv_shift
        v[p.y, p.x] = p.v
    return ScoredInstance(score, part, u, v, area=gt.area)


GT_A = _gt([(0, 0, 1, 0.2, 0.3), (3, 2, 5, 0.7, 0.1), (6, 6, 24, 0.5, 0.5)])
GT_B = _gt([(1, 5, 2, 0.1, 0.9), (7, 1, 3, 0.4, 0.4)])


# ---------------------------------------------------------------- GPS


def test_gps_perfect_is_one():
    p = _pred_from(GT_A)
    assert instance_gps((p.part, p.u, p.v), GT_A.points, CFG) == 1.0


def test_gps_wrong_part_is_zero():
    p = _pred_from(GT_A, part_shift=-1)  # part 1 becomes 0 and so on
    assert instance_gps((p.part, p.u, p.v), GT_A.points, CFG) == 0.0


def test_gps_uv_offset_closed_form():
    p = _pred_from(GT_A, uv_shift=0.1)
    expected = np.exp(-0.01 / 2)
    assert instance_gps((p.part, p.u, p.v), GT_A.points, CFG) == pytest.approx(expected, abs=1e-15)


def test_gps_needs_kappa():
    with pytest.raises(ValueError):
        GpsConfig().kernel()
    with pytest.raises(ValueError):
        GpsConfig(kappa=0.0).kernel()


# ---------------------------------------------------------------- matching and AP


def test_greedy_prefers_best_gt_and_breaks_ties_low():
    gps = np.array([[0.6, 0.9], [0.8, 0.8]])
    assert greedy_match(gps, [0.9, 0.5], 0.5).tolist() == [1, 0]
    assert greedy_match(np.array([[0.7, 0.7]]), [1.0], 0.5).tolist() == [0]
    assert greedy_match(gps, [0.9, 0.5], 0.85).tolist() == [1, -1]


def test_average_precision_examples():
    assert average_precision([1, 1], 2) == 1.0
    assert average_precision([0, 1], 1) == 0.5
    assert average_precision([1, 0, 1], 2) == pytest.approx(0.5 + 0.5 * 2 / 3)
    assert average_precision([], 3) == 0.0


def test_perfect_predictions_give_one():
    res = evaluate([_pred_from(GT_A), _pred_from(GT_B, score=0.8)], [GT_A, GT_B], CFG, 256)
    assert res.ap == 1.0 and res.ar == 1.0 and res.ap50 == 1.0 and res.ar75 == 1.0


def test_empty_predictions_give_zero():
    res = evaluate([], [GT_A, GT_B], CFG, 256)
    assert res.ap == 0.0 and res.ar == 0.0


def test_results_serialize():
    res = evaluate([_pred_from(GT_A)], [GT_A, GT_B], CFG, 256)
    d = json.loads(res.to_json())
    assert d["ap"] == res.ap and "per_threshold" not in d
    lines = res.to_csv().strip().split("\n")
    assert lines[0].startswith("threshold,ap,recall") and len(lines) == 11


def test_area_ranges_scale_with_resolution():
    r = area_ranges(640)
    assert r["m"] == (32.0**2, 96.0**2)
    assert area_ranges(320)["l"][0] == 48.0**2


def _random_case(rng, max_n=4):
    n_pred, n_gt = int(rng.integers(0, max_n + 1)), int(rng.integers(0, max_n + 1))
    gps = np.round(rng.random((n_pred, n_gt)), 2)  # rounding produces ties
    scores = np.round(rng.random(n_pred), 1)
    return gps, scores, n_gt


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    gps, scores, n_gt = _random_case(rng)
    res = evaluate_gps(gps, scores, np.full(len(scores), 1e4), np.full(n_gt, 1e4), 256)
    ref = brute_force_eval(gps.tolist(), scores.tolist(), n_gt, THRESHOLDS.tolist())
    for row, (ap, recall) in zip(res.per_threshold, ref):
        assert row["ap"] == pytest.approx(ap, abs=1e-12)
        assert row["recall"] == pytest.approx(recall, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_invariant_to_monotone_score_rescaling(seed):
    rng = np.random.default_rng(seed)
    gps, scores, n_gt = _random_case(rng)
    area_p, area_g = np.full(len(scores), 1e4), np.full(n_gt, 1e4)
    a = evaluate_gps(gps, scores, area_p, area_g, 256)
    b = evaluate_gps(gps, 3 * scores**3 + 1, area_p, area_g, 256)
    assert a.per_threshold == b.per_threshold


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_ap_nonincreasing_in_threshold_on_disjoint_scenes(seed):
    # each prediction overlaps at most one GT, so raising the threshold can only drop matches
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    gps = np.diag(rng.random(n))
    res = evaluate_gps(gps, rng.random(n), np.full(n, 1e4), np.full(n, 1e4), 256)
    aps = [r["ap"] for r in res.per_threshold]
    assert all(x >= y - 1e-12 for x, y in zip(aps, aps[1:]))


def test_small_gt_ignored_in_large_split():
    gps = np.array([[1.0, 0.0], [0.0, 1.0]])
    res = evaluate_gps(gps, [0.9, 0.8], [10.0, 1e4], [10.0, 1e4], 640)
    assert res.ap == 1.0
    assert res.ap_l == 1.0 and res.ar_l == 1.0
    assert res.ap_m == 0.0
