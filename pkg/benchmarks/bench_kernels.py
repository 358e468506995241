"""Time the numba kernels against the numpy reference on representative inputs.

    python benchmarks/bench_kernels.py [--repeat N]

The numba functions are called once before timing so compilation is excluded.
"""

import argparse
import timeit

import numpy as np

from zoomcascade.kernels import _numba, _numpy


def random_boxes(rng, n, side=600.0):
    xy = rng.uniform(0, side, (n, 2))
    wh = rng.uniform(4, 60, (n, 2))
    return np.ascontiguousarray(np.hstack([xy, xy + wh]))


def cases(rng):
    gt = random_boxes(rng, 60)
    det = random_boxes(rng, 200)
    ious = _numpy.iou_matrix(gt, det)
    order = rng.permutation(200).astype(np.int64)
    canvas_boxes = random_boxes(rng, 150, 64.0)
    values = rng.random(150)
    tp = (rng.random(2000) < 0.4).astype(np.float64)
    return {
        "iou_matrix 60x200": lambda k: k.iou_matrix(gt, det),
        "greedy_match 60x200": lambda k: k.greedy_match(ious, order, 0.5),
        "nms_keep 200": lambda k: k.nms_keep(det, order, 0.5),
        "paint_boxes 64x64/150": lambda k: k.paint_boxes(64, 64, *(canvas_boxes[:, i].copy() for i in range(4)),
                                                         values),
        "all_point_ap 2000": lambda k: k.all_point_ap(tp, 900),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<24}{'numpy us':>12}{'numba us':>12}{'speedup':>10}")
    for name, fn in cases(rng).items():
        fn(_numba)
        t_np = min(timeit.repeat(lambda: fn(_numpy), number=args.repeat, repeat=3)) / args.repeat * 1e6
        t_nb = min(timeit.repeat(lambda: fn(_numba), number=args.repeat, repeat=3)) / args.repeat * 1e6
        print(f"{name:<24}{t_np:>12.1f}{t_nb:>12.1f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
