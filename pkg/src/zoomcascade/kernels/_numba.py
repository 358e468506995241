"""Numba-compiled kernels mirroring ``_numpy`` one for one."""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def iou_matrix(a, b):
    n = a.shape[0]
    m = b.shape[0]
    out = np.zeros((n, m))
    for i in range(n):
        area_a = (a[i, 2] - a[i, 0]) * (a[i, 3] - a[i, 1])
        for j in range(m):
            ix = min(a[i, 2], b[j, 2]) - max(a[i, 0], b[j, 0])
            iy = min(a[i, 3], b[j, 3]) - max(a[i, 1], b[j, 1])
            if ix <= 0.0 or iy <= 0.0:
                continue
            inter = ix * iy
            area_b = (b[j, 2] - b[j, 0]) * (b[j, 3] - b[j, 1])
            union = area_a + area_b - inter
            if union > 0.0:
                out[i, j] = inter / union
    return out


@njit(cache=True)
def greedy_match(ious, det_order, threshold):
    n_gt = ious.shape[0]
    n_det = ious.shape[1]
    gt_for_det = np.full(n_det, -1, dtype=np.int64)
    free = np.ones(n_gt, dtype=np.bool_)
    for k in range(det_order.shape[0]):
        d = det_order[k]
        best = -1
        best_iou = -1.0
        for g in range(n_gt):
            if free[g] and ious[g, d] >= threshold and ious[g, d] > best_iou:
                best = g
                best_iou = ious[g, d]
        if best >= 0:
            gt_for_det[d] = best
            free[best] = False
    return gt_for_det


@njit(cache=True)
def nms_keep(boxes, order, threshold):
    n = boxes.shape[0]
    keep = np.zeros(n, dtype=np.bool_)
    alive = np.ones(n, dtype=np.bool_)
    ious = iou_matrix(boxes, boxes)
    for k in range(order.shape[0]):
        i = order[k]
        if not alive[i]:
            continue
        keep[i] = True
        for j in range(n):
            if ious[i, j] > threshold:
                alive[j] = False
        alive[i] = False
    return keep


@njit(cache=True)
def paint_boxes(height, width, x0, y0, x1, y1, values):
    canvas = np.zeros((height, width))
    for k in range(values.shape[0]):
        cx0 = max(int(math.floor(x0[k])), 0)
        cx1 = min(int(math.ceil(x1[k])), width)
        cy0 = max(int(math.floor(y0[k])), 0)
        cy1 = min(int(math.ceil(y1[k])), height)
        for r in range(cy0, cy1):
            cov_y = min(y1[k], r + 1.0) - max(y0[k], float(r))
            cov_y = min(max(cov_y, 0.0), 1.0)
            for c in range(cx0, cx1):
                cov_x = min(x1[k], c + 1.0) - max(x0[k], float(c))
                cov_x = min(max(cov_x, 0.0), 1.0)
                cov = cov_y * cov_x
                canvas[r, c] = canvas[r, c] * (1.0 - cov) + cov * values[k]
    return canvas


@njit(cache=True)
def all_point_ap(tp, n_gt):
    n = tp.shape[0]
    if n_gt <= 0 or n == 0:
        return 0.0
    precision = np.empty(n)
    recall = np.empty(n)
    ctp = 0.0
    for k in range(n):
        ctp += tp[k]
        precision[k] = ctp / (k + 1)
        recall[k] = ctp / n_gt
    for k in range(n - 2, -1, -1):
        if precision[k + 1] > precision[k]:
            precision[k] = precision[k + 1]
    area = 0.0
    prev = 0.0
    for k in range(n):
        area += (recall[k] - prev) * precision[k]
        prev = recall[k]
    return area
