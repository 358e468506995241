"""IoU, greedy matching, recall and COCO-style AP/AR."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import UndefinedMetricError
from .scene import BBox, boxes_to_xyxy

DEFAULT_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))


@dataclass(frozen=True)
class MetricConfig:
    iou_thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS
    reward_iou: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "iou_thresholds", tuple(float(t) for t in self.iou_thresholds))
        if not self.iou_thresholds:
            raise ValueError("at least one IoU threshold is required")
        for t in (*self.iou_thresholds, self.reward_iou):
            if not 0.0 < t <= 1.0:
                raise ValueError(f"IoU threshold {t} outside (0, 1]")


@dataclass
class MatchResult:
    matched_pairs: list[tuple[int, int, float]] = field(default_factory=list)
    unmatched_gt: list[int] = field(default_factory=list)
    unmatched_det: list[int] = field(default_factory=list)


def iou(a: BBox, b: BBox) -> float:
    return float(kernels.iou_matrix(boxes_to_xyxy([a]), boxes_to_xyxy([b]))[0, 0])


def _score_order(scores: np.ndarray) -> np.ndarray:
    # stable sort keeps lower indices first among equal scores
    return np.argsort(-scores, kind="stable")


def _scores(det: Sequence[BBox]) -> np.ndarray:
    if any(d.score is None for d in det):
        raise ValueError("every detection must carry a score")
    return np.array([d.score for d in det], dtype=np.float64)


def match_greedy(gt: Sequence[BBox], det: Sequence[BBox], threshold: float) -> MatchResult:
    scores = _scores(det)
    ious = kernels.iou_matrix(boxes_to_xyxy(gt), boxes_to_xyxy(det))
    gt_for_det = kernels.greedy_match(ious, _score_order(scores), threshold)
    pairs = [(int(g), d, float(ious[g, d])) for d, g in enumerate(gt_for_det) if g >= 0]
    pairs.sort(key=lambda p: p[0])
    matched = {p[0] for p in pairs}
    return MatchResult(pairs, [g for g in range(len(gt)) if g not in matched],
                       [d for d, g in enumerate(gt_for_det) if g < 0])


def recall(gt: Sequence[BBox], det: Sequence[BBox], threshold: float) -> float:
    """Fraction of ground truth matched; vacuously 1.0 for an empty ground truth."""
    if not gt:
        return 1.0
    if not det:
        return 0.0
    return len(match_greedy(gt, det, threshold).matched_pairs) / len(gt)


def average_precision(gt_by_scene: Sequence[Sequence[BBox]], det_by_scene: Sequence[Sequence[BBox]],
                      config: MetricConfig = MetricConfig()) -> tuple[float, float]:
    """Return ``(AP, AR)`` in percent, averaged over classes and IoU thresholds.

    Detections are pooled across scenes and ranked by descending score; ties
    keep scene order, then within-scene index order.
    """
    if len(gt_by_scene) != len(det_by_scene):
        raise ValueError("ground truth and detections must cover the same scenes")
    classes = sorted({b.class_id for gt in gt_by_scene for b in gt})
    if not classes:
        raise UndefinedMetricError("AP/AR are undefined without any ground truth")

    thresholds = config.iou_thresholds
    ap_sum = np.zeros(len(thresholds))
    ar_sum = np.zeros(len(thresholds))
    for c in classes:
        n_gt = 0
        scores_all, tp_all = [], [[] for _ in thresholds]
        for gt, det in zip(gt_by_scene, det_by_scene):
            g = [b for b in gt if b.class_id == c]
            d = [b for b in det if b.class_id == c]
            n_gt += len(g)
            if not d:
                continue
            s = _scores(d)
            order = _score_order(s)
            ious = kernels.iou_matrix(boxes_to_xyxy(g), boxes_to_xyxy(d))
            scores_all.append(s)
            for k, t in enumerate(thresholds):
                tp_all[k].append(kernels.greedy_match(ious, order, t) >= 0)
        if not scores_all:
            continue
        scores = np.concatenate(scores_all)
        rank = _score_order(scores)
        for k in range(len(thresholds)):
            tp = np.concatenate(tp_all[k])[rank]
            ap_sum[k] += kernels.all_point_ap(tp, n_gt)
            ar_sum[k] += tp.sum() / n_gt
    n = len(classes) * len(thresholds)
    return 100.0 * float(ap_sum.sum()) / n, 100.0 * float(ar_sum.sum()) / n


def nms(boxes: Sequence[BBox], threshold: float = 0.5, tile_rank: Sequence[int] | None = None) -> list[int]:
    """Class-aware non-maximum suppression; returns kept indices in input order.

    Higher score wins; ties go to the lower ``tile_rank`` (default: input index).
    """
    if not boxes:
        return []
    scores = _scores(boxes)
    rank = np.arange(len(boxes)) if tile_rank is None else np.asarray(tile_rank)
    keep = np.zeros(len(boxes), dtype=bool)
    cls = np.array([b.class_id for b in boxes])
    xyxy = boxes_to_xyxy(boxes)
    for c in np.unique(cls):
        idx = np.flatnonzero(cls == c)
        order = np.lexsort((idx, rank[idx], -scores[idx]))
        keep[idx] = kernels.nms_keep(xyxy[idx], order, threshold)
    return [int(i) for i in np.flatnonzero(keep)]
