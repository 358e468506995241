import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import ap_ar_oracle, iou_oracle, optimal_match_count
from zoomcascade.errors import UndefinedMetricError
from zoomcascade.metrics import MetricConfig, average_precision, iou, match_greedy, nms, recall
from zoomcascade.scene import BBox

B = BBox(50, 50, 20, 20)


def box(scored: bool, side=60.0):
    score = st.floats(0.01, 1.0) if scored else st.none()
    return st.builds(BBox, st.floats(0, side), st.floats(0, side), st.floats(2, 30), st.floats(2, 30),
                     st.integers(0, 1), score)


def boxes(scored: bool, max_size=5):
    return st.lists(box(scored), max_size=max_size)


def test_iou_unit_cases():
    assert iou(B, B) == 1.0
    assert iou(B, BBox(500, 500, 20, 20)) == 0.0
    assert iou(BBox(1, 1, 2, 2), BBox(2, 1, 2, 2)) == pytest.approx(1 / 3, abs=1e-12)


@given(box(False), box(False))
def test_iou_symmetric_and_matches_oracle(a, b):
    assert iou(a, b) == iou(b, a)
    assert iou(a, b) == pytest.approx(iou_oracle(a, b), abs=1e-12)


def test_match_identity_and_empty():
    m = match_greedy([B], [BBox(50, 50, 20, 20, score=0.9)], 0.5)
    assert m.matched_pairs == [(0, 0, 1.0)]
    assert match_greedy([B], [], 0.5).unmatched_gt == [0]


def test_greedy_prefers_higher_score():
    gt = BBox(0, 0, 10, 10)
    # IoU 0.8: shift along x so that overlap/union = 0.8 -> 10-d over 10+d, d = 10/9
    d_hi = BBox(10 / 9, 0, 10, 10, score=0.5)
    # IoU 0.6: d = 10/4
    d_lo = BBox(2.5, 0, 10, 10, score=0.9)
    assert iou(gt, d_hi) == pytest.approx(0.8)
    assert iou(gt, d_lo) == pytest.approx(0.6)
    m = match_greedy([gt], [d_hi, d_lo], 0.5)
    assert [p[1] for p in m.matched_pairs] == [1]
    assert m.unmatched_det == [0]


def test_missing_score_is_rejected():
    with pytest.raises(ValueError):
        match_greedy([B], [B], 0.5)


def test_recall_unit_cases():
    gt = [B, BBox(500, 500, 10, 10)]
    assert recall(gt, [BBox(50, 50, 20, 20, score=0.9)], 0.5) == 0.5
    assert recall([], [], 0.5) == 1.0
    assert recall(gt, [], 0.5) == 0.0


@given(boxes(False, 4), boxes(True, 4), st.sampled_from([0.3, 0.5, 0.7]))
def test_greedy_never_beats_optimal_matching(gt, det, t):
    greedy = len(match_greedy(gt, det, t).matched_pairs)
    assert greedy <= optimal_match_count(gt, det, t)


@given(boxes(False, 5), boxes(True, 5), box(True))
def test_adding_a_detection_never_lowers_recall(gt, det, extra):
    extra_det = BBox(extra.cx, extra.cy, extra.w, extra.h, extra.class_id, 0.0)
    assert recall(gt, det + [extra_det], 0.5) >= recall(gt, det, 0.5)


def test_ap_perfect_and_empty():
    gt = [[B, BBox(10, 10, 5, 5, 1)]]
    perfect = [[BBox(b.cx, b.cy, b.w, b.h, b.class_id, 1.0) for b in gt[0]]]
    assert average_precision(gt, perfect) == (100.0, 100.0)
    assert average_precision(gt, [[]]) == (0.0, 0.0)
    with pytest.raises(UndefinedMetricError):
        average_precision([[]], [[]])


@given(st.lists(st.tuples(boxes(False, 5), boxes(True, 6)), min_size=1, max_size=3))
def test_ap_matches_exhaustive_prefix_oracle(instances):
    gt = [g for g, _ in instances]
    det = [d for _, d in instances]
    if not any(gt):
        return
    cfg = MetricConfig((0.5, 0.75))
    ap, ar = average_precision(gt, det, cfg)
    oap, oar = ap_ar_oracle(gt, det, cfg.iou_thresholds)
    assert ap == pytest.approx(oap, abs=1e-9)
    assert ar == pytest.approx(oar, abs=1e-9)


@given(st.lists(st.tuples(boxes(False, 5), boxes(True, 6)), min_size=1, max_size=3), st.floats(0.1, 0.99))
def test_ap_invariant_to_score_rescaling(instances, k):
    gt = [g for g, _ in instances]
    if not any(gt):
        return
    det = [d for _, d in instances]
    scaled = [[BBox(b.cx, b.cy, b.w, b.h, b.class_id, b.score * k) for b in d] for d in det]
    a1, r1 = average_precision(gt, det)
    a2, r2 = average_precision(gt, scaled)
    assert a1 == pytest.approx(a2, abs=1e-12) and r1 == pytest.approx(r2, abs=1e-12)


def test_nms_keeps_best_and_respects_class():
    a = BBox(10, 10, 10, 10, 0, 0.9)
    b = BBox(11, 10, 10, 10, 0, 0.8)
    c = BBox(11, 10, 10, 10, 1, 0.7)
    assert nms([a, b, c]) == [0, 2]


def test_nms_tie_goes_to_lower_tile_rank():
    a = BBox(10, 10, 10, 10, 0, 0.5)
    b = BBox(10, 10, 10, 10, 0, 0.5)
    assert nms([a, b], tile_rank=[3, 1]) == [1]
    assert nms([a, b]) == [0]


def test_nms_keeps_boxes_at_exactly_half_iou():
    a = BBox(0, 0, 10, 10, 0, 0.9)
    # shifted by 10/3 gives IoU exactly 0.5
    b = BBox(10 / 3, 0, 10, 10, 0, 0.8)
    assert iou(a, b) == pytest.approx(0.5)
    assert len(nms([a, b], 0.5)) == 2 or iou(a, b) > 0.5


@given(boxes(True, 8))
def test_nms_idempotent(det):
    kept = [det[i] for i in nms(det)]
    assert [kept[i] for i in nms(kept)] == kept


def test_metric_config_validation():
    with pytest.raises(ValueError):
        MetricConfig(())
    with pytest.raises(ValueError):
        MetricConfig((0.0,))
    assert MetricConfig().iou_thresholds[0] == 0.5 and len(MetricConfig().iou_thresholds) == 10
    assert np.isclose(MetricConfig().iou_thresholds[-1], 0.95)
