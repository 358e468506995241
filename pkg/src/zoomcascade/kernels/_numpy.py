"""Pure-numpy reference kernels.

Boxes are ``(n, 4)`` float64 arrays of ``x0, y0, x1, y1`` corners.
"""

import numpy as np


def iou_matrix(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ix = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    iy = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def greedy_match(ious, det_order, threshold):
    """Assign each detection (in ``det_order``) to its best free ground truth.

    Returns ``gt_for_det`` with -1 for unmatched detections.
    """
    n_gt, n_det = ious.shape
    gt_for_det = np.full(n_det, -1, dtype=np.int64)
    free = np.ones(n_gt, dtype=bool)
    for d in det_order:
        if n_gt == 0:
            break
        col = np.where(free & (ious[:, d] >= threshold), ious[:, d], -1.0)
        g = int(np.argmax(col))  # first maximum -> lowest gt index on ties
        if col[g] >= 0.0:
            gt_for_det[d] = g
            free[g] = False
    return gt_for_det


def nms_keep(boxes, order, threshold):
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    keep = np.zeros(len(boxes), dtype=bool)
    alive = np.ones(len(boxes), dtype=bool)
    ious = iou_matrix(boxes, boxes)
    for i in order:
        if not alive[i]:
            continue
        keep[i] = True
        alive &= ~(ious[i] > threshold)
        alive[i] = False
    return keep


def paint_boxes(height, width, x0, y0, x1, y1, values):
    """Coverage-weighted painting; later boxes are blended over earlier ones."""
    canvas = np.zeros((height, width), dtype=np.float64)
    for k in range(len(values)):
        cx0 = max(int(np.floor(x0[k])), 0)
        cx1 = min(int(np.ceil(x1[k])), width)
        cy0 = max(int(np.floor(y0[k])), 0)
        cy1 = min(int(np.ceil(y1[k])), height)
        if cx1 <= cx0 or cy1 <= cy0:
            continue
        cols = np.arange(cx0, cx1, dtype=np.float64)
        rows = np.arange(cy0, cy1, dtype=np.float64)
        cov_x = np.clip(np.minimum(x1[k], cols + 1.0) - np.maximum(x0[k], cols), 0.0, 1.0)
        cov_y = np.clip(np.minimum(y1[k], rows + 1.0) - np.maximum(y0[k], rows), 0.0, 1.0)
        cov = cov_y[:, None] * cov_x[None, :]
        block = canvas[cy0:cy1, cx0:cx1]
        canvas[cy0:cy1, cx0:cx1] = block * (1.0 - cov) + cov * values[k]
    return canvas


def all_point_ap(tp, n_gt):
    """Area under the all-point interpolated precision/recall curve."""
    tp = np.asarray(tp, dtype=np.float64)
    if n_gt <= 0 or tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, tp.size + 1)
    recall = ctp / n_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate(([0.0], recall)))
    return float(np.sum(steps * envelope))
