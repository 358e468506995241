"""Hot loops behind a backend switch.

The numba backend is used when numba imports cleanly, unless the environment
variable ``ZOOMCASCADE_NUMBA`` is set to ``0``. Both backends take and return
plain numpy arrays; the wrappers below normalise dtypes so callers never see
the difference.
"""

from __future__ import annotations

import os

import numpy as np

from . import _numpy

_use_numba = os.environ.get("ZOOMCASCADE_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")
_impl = _numpy
if _use_numba:
    try:
        from . import _numba as _impl  # noqa: F811
    except ImportError:  # pragma: no cover - numba missing
        _impl = _numpy

BACKEND = "numba" if _impl is not _numpy else "numpy"


def _boxes(x):
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64).reshape(-1, 4))


def iou_matrix(a, b):
    return _impl.iou_matrix(_boxes(a), _boxes(b))


def greedy_match(ious, det_order, threshold):
    ious = np.ascontiguousarray(ious, dtype=np.float64)
    order = np.ascontiguousarray(det_order, dtype=np.int64)
    return _impl.greedy_match(ious, order, float(threshold))


def nms_keep(boxes, order, threshold):
    return _impl.nms_keep(_boxes(boxes), np.ascontiguousarray(order, dtype=np.int64), float(threshold))


def paint_boxes(height, width, x0, y0, x1, y1, values):
    arrs = [np.ascontiguousarray(v, dtype=np.float64) for v in (x0, y0, x1, y1, values)]
    return _impl.paint_boxes(int(height), int(width), *arrs)


def all_point_ap(tp, n_gt):
    return float(_impl.all_point_ap(np.ascontiguousarray(tp, dtype=np.float64), int(n_gt)))


__all__ = ["BACKEND", "iou_matrix", "greedy_match", "nms_keep", "paint_boxes", "all_point_ap"]
