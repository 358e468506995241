"""Inference-time cascade, fixed baselines, the cost model and evaluation reports.

Every policy reduces to the same two decisions per scene: which patches are
activated (``patch_zoom``) and which subpatches are processed at the fine
tier (``sub_zoom``). Detection, merging and cost accounting are shared, so all
policies are charged identically.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import policy as pn
from . import rng as rng_mod
from .metrics import MetricConfig, average_precision, nms
from .scene import BBox, GridLayout, ObservationConfig, RasterObservation, Scene, assign_boxes, crop_observation

KINDS = ("cascade", "cpnet_only", "fpnet_only", "random", "entropy", "sliding_lr", "sliding_hr")
LEARNED = ("cascade", "cpnet_only", "fpnet_only")
# command-line spellings
CLI_NAMES = {"cascade": "cascade", "cpnet-only": "cpnet_only", "fpnet-only": "fpnet_only", "random": "random",
             "entropy": "entropy", "sliding-l": "sliding_lr", "sliding-h": "sliding_hr"}

COUNT_BINS = ((0, 0), (1, 1), (2, 3), (4, 7), (8, 15), (16, 31), (32, None))
# mean object area as a fraction of the tile area
SIZE_BINS = (0.0, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, math.inf)


@dataclass(frozen=True)
class CostModel:
    t_coarse_ms: float = 10.0
    t_fine_ms: float = 50.0
    t_cpnet_ms: float = 30.0
    t_fpnet_ms: float = 2.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v >= 0:
                raise ValueError(f"{k} must be non-negative, got {v}")

    @classmethod
    def zero_overhead(cls, t_coarse_ms: float = 10.0, t_fine_ms: float = 50.0) -> "CostModel":
        return cls(t_coarse_ms, t_fine_ms, 0.0, 0.0)

    def runtime(self, ran_cpnet: bool, fpnet_runs: int, fine: int, coarse: int, probe_ms: float = 0.0) -> float:
        return ((self.t_cpnet_ms if ran_cpnet else 0.0) + fpnet_runs * self.t_fpnet_ms
                + fine * self.t_fine_ms + coarse * self.t_coarse_ms + probe_ms)


@dataclass(frozen=True)
class PolicySpec:
    """A policy to evaluate. ``zoom_prob``/``patch_prob`` drive ``random``;
    ``entropy_thresholds`` are the (patch, subpatch) confidence thresholds."""

    kind: str
    cpnet: pn.PolicyModel | None = field(default=None, compare=False)
    fpnet: pn.PolicyModel | None = field(default=None, compare=False)
    zoom_prob: float = 0.5
    patch_prob: float = 1.0
    entropy_thresholds: tuple[float, float] = (0.5, 0.5)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in ("cascade", "cpnet_only") and self.cpnet is None:
            raise ValueError(f"policy {self.kind!r} needs a CPNet model")
        if self.kind in ("cascade", "fpnet_only") and self.fpnet is None:
            raise ValueError(f"policy {self.kind!r} needs an FPNet model")
        if not (0.0 <= self.zoom_prob <= 1.0 and 0.0 <= self.patch_prob <= 1.0):
            raise ValueError("zoom_prob and patch_prob must lie in [0, 1]")

    @property
    def name(self) -> str:
        if self.kind == "random":
            return f"random(p={self.zoom_prob:g})"
        return self.kind

    def parameters(self) -> dict:
        if self.kind == "random":
            return {"zoom_prob": self.zoom_prob, "patch_prob": self.patch_prob}
        if self.kind == "entropy":
            return {"entropy_thresholds": list(self.entropy_thresholds)}
        return {}


@dataclass
class EpisodeResult:
    detections: list[BBox]
    patch_actions: np.ndarray  # (P_c,) int8
    subpatch_actions: np.ndarray  # (P_c, P_f) int8, fine tier where 1
    runtime_ms: float
    hr_subpatch_count: int
    activated_patches: int
    probe_ms: float = 0.0


def _check_models(grid: GridLayout, observation: ObservationConfig, cpnet, fpnet) -> None:
    side = observation.raster_side
    if cpnet is not None and (cpnet.n_outputs != grid.n_patches or cpnet.n_inputs != side * side):
        raise ValueError(f"CPNet shape {cpnet.layer_dims} does not fit {grid.n_patches} patches "
                         f"on a {side}x{side} raster")
    ps = observation.patch_side(grid)
    if fpnet is not None and (fpnet.n_outputs != grid.n_subpatches or fpnet.n_inputs != ps * ps):
        raise ValueError(f"FPNet shape {fpnet.layer_dims} does not fit {grid.n_subpatches} subpatches "
                         f"on a {ps}x{ps} crop")


def _fpnet_decisions(fpnet, obs: RasterObservation, grid: GridLayout, patches) -> np.ndarray:
    out = np.zeros((grid.n_patches, grid.n_subpatches), dtype=np.int8)
    idx = [int(i) for i in patches]
    if idx:
        x = np.stack([crop_observation(obs, grid, i).flat() for i in idx])
        s, _ = pn.forward(fpnet, x)
        out[idx] = pn.greedy_actions(s)
    return out


def _detect_and_merge(scene: Scene, grid: GridLayout, sub_zoom: np.ndarray, detectors,
                      nms_iou: float = 0.5) -> list[BBox]:
    assigned = assign_boxes(scene, grid)
    boxes: list[BBox] = []
    ranks: list[int] = []
    for i in range(grid.n_patches):
        for j in range(grid.n_subpatches):
            tier = "fine" if sub_zoom[i, j] else "coarse"
            ds = detectors.detect(scene.id, i, j, tier, assigned.per_subpatch[i][j], grid.subpatch_rect(i, j))
            boxes.extend(ds.boxes)
            ranks.extend([i * grid.n_subpatches + j] * len(ds.boxes))
    keep = nms(boxes, nms_iou, ranks)
    return [boxes[k] for k in keep]


def _finish(scene, grid, detectors, cost, patch_zoom, sub_zoom, ran_cpnet, fpnet_runs, probe_ms=0.0):
    fine = int(sub_zoom.sum())
    coarse = grid.n_patches * grid.n_subpatches - fine
    runtime = cost.runtime(ran_cpnet, fpnet_runs, fine, coarse, probe_ms)
    dets = _detect_and_merge(scene, grid, sub_zoom, detectors)
    return EpisodeResult(dets, patch_zoom.astype(np.int8), sub_zoom.astype(np.int8), runtime, fine,
                         int(patch_zoom.sum()), probe_ms)


def run_cascade(scene: Scene, grid: GridLayout, cpnet: pn.PolicyModel, fpnet: pn.PolicyModel, detectors,
                cost: CostModel = CostModel(), rng: np.random.Generator | None = None,
                observation: ObservationConfig = ObservationConfig()) -> EpisodeResult:
    """Greedy CPNet on the scene raster, greedy FPNet on each activated patch crop.

    ``rng`` is accepted for signature parity with the baselines; greedy
    decisions consume no randomness.
    """
    _check_models(grid, observation, cpnet, fpnet)
    obs = observation.scene_raster(scene)
    s, _ = pn.forward(cpnet, obs)
    patch_zoom = pn.greedy_actions(s)
    sub_zoom = _fpnet_decisions(fpnet, obs, grid, np.flatnonzero(patch_zoom))
    return _finish(scene, grid, detectors, cost, patch_zoom, sub_zoom, True, int(patch_zoom.sum()))


def _entropy_decisions(scene, grid, detectors, cost, thresholds):
    """Threshold rule on mean coarse confidence, first per patch, then per subpatch.

    Every probe is a coarse pass and is charged as one. Subpatch probes that
    stay coarse double as the final coarse detections and are not charged twice.
    """
    assigned = assign_boxes(scene, grid)
    t_patch, t_sub = thresholds
    patch_zoom = np.zeros(grid.n_patches, dtype=np.int8)
    sub_zoom = np.zeros((grid.n_patches, grid.n_subpatches), dtype=np.int8)
    probes = 0
    for i in range(grid.n_patches):
        probes += 1
        ds = detectors.detect(scene.id, i, None, "coarse", assigned.per_patch[i], grid.patch_rect(i))
        if entropy_score(ds.boxes) <= t_patch:
            continue
        patch_zoom[i] = 1
        for j in range(grid.n_subpatches):
            ds = detectors.detect(scene.id, i, j, "coarse", assigned.per_subpatch[i][j], grid.subpatch_rect(i, j))
            if entropy_score(ds.boxes) > t_sub:
                sub_zoom[i, j] = 1
                probes += 1
    return patch_zoom, sub_zoom, probes * cost.t_coarse_ms


def entropy_score(boxes: Sequence[BBox]) -> float:
    """Mean detection confidence; 0 when nothing was detected."""
    if not boxes:
        return 0.0
    return math.fsum(b.score for b in boxes) / len(boxes)


def run_baseline(scene: Scene, grid: GridLayout, spec: PolicySpec, detectors, cost: CostModel = CostModel(),
                 rng: np.random.Generator | None = None,
                 observation: ObservationConfig = ObservationConfig()) -> EpisodeResult:
    """Run any policy kind. Network overheads are charged only when a network runs."""
    pc, pf = grid.n_patches, grid.n_subpatches
    kind = spec.kind
    if kind == "cascade":
        return run_cascade(scene, grid, spec.cpnet, spec.fpnet, detectors, cost, rng, observation)
    if kind in ("cpnet_only", "fpnet_only"):
        _check_models(grid, observation, spec.cpnet if kind == "cpnet_only" else None,
                      spec.fpnet if kind == "fpnet_only" else None)
        obs = observation.scene_raster(scene)
        if kind == "cpnet_only":
            s, _ = pn.forward(spec.cpnet, obs)
            patch_zoom = pn.greedy_actions(s)
            sub_zoom = np.repeat(patch_zoom[:, None], pf, axis=1)
            return _finish(scene, grid, detectors, cost, patch_zoom, sub_zoom, True, 0)
        sub_zoom = _fpnet_decisions(spec.fpnet, obs, grid, range(pc))
        return _finish(scene, grid, detectors, cost, sub_zoom.any(axis=1).astype(np.int8), sub_zoom, False, pc)
    if kind == "random":
        if rng is None:
            raise ValueError("the random policy needs an rng stream")
        patch_zoom = (rng.random(pc) < spec.patch_prob).astype(np.int8)
        sub_zoom = ((rng.random((pc, pf)) < spec.zoom_prob) & (patch_zoom[:, None] == 1)).astype(np.int8)
        return _finish(scene, grid, detectors, cost, patch_zoom, sub_zoom, False, 0)
    if kind == "entropy":
        patch_zoom, sub_zoom, probe_ms = _entropy_decisions(scene, grid, detectors, cost, spec.entropy_thresholds)
        return _finish(scene, grid, detectors, cost, patch_zoom, sub_zoom, False, 0, probe_ms)
    if kind == "sliding_lr":
        return _finish(scene, grid, detectors, cost, np.zeros(pc, np.int8), np.zeros((pc, pf), np.int8), False, 0)
    if kind == "sliding_hr":
        return _finish(scene, grid, detectors, cost, np.ones(pc, np.int8), np.ones((pc, pf), np.int8), False, 0)
    raise ValueError(f"unknown policy kind {kind!r}")


@dataclass
class EvalReport:
    policy_name: str
    ap_percent: float
    ar_percent: float
    runtime_ms_mean: float
    hr_ratio_percent: float
    scenes_evaluated: int
    zoom_grid_stats: dict
    per_scene: list[dict] = field(default_factory=list)
    config: dict | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.config is None:
            d.pop("config")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    def table_row(self) -> str:
        return (f"{self.policy_name} {self.ap_percent:.2f} {self.ar_percent:.2f} "
                f"{self.runtime_ms_mean:.1f} {self.hr_ratio_percent:.1f}")


def evaluate(spec: PolicySpec, scenes: Sequence[Scene], grid: GridLayout, detectors,
             cost: CostModel = CostModel(), metric_config: MetricConfig = MetricConfig(), seed: int = 0,
             observation: ObservationConfig = ObservationConfig(), threads: int = 1,
             config: dict | None = None) -> EvalReport:
    if not scenes:
        raise ValueError("cannot evaluate on an empty dataset")

    def one(scene: Scene) -> EpisodeResult:
        return run_baseline(scene, grid, spec, detectors, cost, rng_mod.stream(seed, "eval", scene.id), observation)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, scenes))
    else:
        results = [one(s) for s in scenes]

    ap, ar = average_precision([s.ground_truth for s in scenes], [r.detections for r in results], metric_config)
    total_sub = grid.n_patches * grid.n_subpatches
    patch_freq = np.mean([r.patch_actions for r in results], axis=0)
    sub_freq = np.mean([r.subpatch_actions for r in results], axis=0)
    per_scene = [{"id": s.id, "runtime_ms": r.runtime_ms, "hr_subpatches": r.hr_subpatch_count,
                  "activated_patches": r.activated_patches, "probe_ms": r.probe_ms,
                  "patch_actions": r.patch_actions.tolist()} for s, r in zip(scenes, results)]
    return EvalReport(
        policy_name=spec.name,
        ap_percent=ap,
        ar_percent=ar,
        runtime_ms_mean=math.fsum(r.runtime_ms for r in results) / len(results),
        hr_ratio_percent=100.0 * sum(r.hr_subpatch_count for r in results) / (total_sub * len(results)),
        scenes_evaluated=len(results),
        zoom_grid_stats={"patch_zoom_frequency": patch_freq.tolist(),
                         "subpatch_zoom_frequency": sub_freq.tolist()},
        per_scene=per_scene,
        config=config,
    )


@dataclass
class ProfileBin:
    lo: float
    hi: float | None
    n_tiles: int
    mean_zoom_probability: float | None  # None marks an empty bin


@dataclass
class ZoomProfile:
    by_count: list[ProfileBin]
    by_size: list[ProfileBin]
    spearman_count: float | None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["axis", "lo", "hi", "n_tiles", "mean_zoom_probability"])
        for axis, bins in (("count", self.by_count), ("size", self.by_size)):
            for b in bins:
                w.writerow([axis, repr(b.lo), "" if b.hi is None else repr(b.hi), b.n_tiles,
                            "" if b.mean_zoom_probability is None else repr(b.mean_zoom_probability)])
        return buf.getvalue()


def _bin_means(values: np.ndarray, probs: np.ndarray, edges) -> list[ProfileBin]:
    out = []
    for lo, hi in edges:
        mask = (values >= lo) & (values <= (np.inf if hi is None else hi))
        n = int(mask.sum())
        out.append(ProfileBin(lo, hi, n, float(probs[mask].mean()) if n else None))
    return out


def zoom_probability_profile(model: pn.PolicyModel, scenes: Sequence[Scene], grid: GridLayout,
                             observation: ObservationConfig = ObservationConfig(), count_bins=COUNT_BINS,
                             size_bins=SIZE_BINS) -> ZoomProfile:
    """Mean zoom probability per object-count bin and per mean-object-size bin.

    A CPNet is profiled over patches of whole-scene rasters, an FPNet over the
    subpatches of every patch crop. Size is mean object area over tile area;
    empty tiles only enter the count profile.
    """
    from scipy.stats import spearmanr

    cpnet = model.trained_for == "cpnet"
    probs, counts, sizes = [], [], []
    for scene in scenes:
        obs = observation.scene_raster(scene)
        assigned = assign_boxes(scene, grid)
        if cpnet:
            s, _ = pn.forward(model, obs)
            tiles = [(s[i], assigned.per_patch[i], grid.patch_size ** 2) for i in range(grid.n_patches)]
        else:
            s, _ = pn.forward(model, np.stack([crop_observation(obs, grid, i).flat() for i in range(grid.n_patches)]))
            tiles = [(s[i, j], assigned.per_subpatch[i][j], grid.subpatch_size ** 2)
                     for i in range(grid.n_patches) for j in range(grid.n_subpatches)]
        for p, boxes, area in tiles:
            probs.append(p)
            counts.append(len(boxes))
            sizes.append(math.fsum(b.area for b in boxes) / len(boxes) / area if boxes else np.nan)
    probs = np.asarray(probs)
    counts = np.asarray(counts, dtype=np.float64)
    sizes = np.asarray(sizes)
    by_count = _bin_means(counts, probs, count_bins)
    size_edges = [(lo, None if math.isinf(hi) else hi) for lo, hi in zip(size_bins[:-1], size_bins[1:])]
    nonempty = ~np.isnan(sizes)
    by_size = _bin_means(sizes[nonempty], probs[nonempty], size_edges)
    present = [(k, b.mean_zoom_probability) for k, b in enumerate(by_count) if b.mean_zoom_probability is not None]
    rho = None
    if len(present) >= 2 and len({m for _, m in present}) > 1:
        r = spearmanr([k for k, _ in present], [m for _, m in present]).statistic
        rho = None if np.isnan(r) else float(r)
    return ZoomProfile(by_count, by_size, rho)


def decision_grid(result: EpisodeResult, grid: GridLayout, cell_px: int = 8) -> RasterObservation:
    """Subpatch decisions laid out on the patch grid: grey for coarse, white for fine."""
    sps = grid.subpatches_per_side
    n = grid.patches_per_side * sps
    cells = np.full((n, n), 0.5)
    for i in range(grid.n_patches):
        pr, pc = divmod(i, grid.patches_per_side)
        for j in range(grid.n_subpatches):
            sr, sc = divmod(j, sps)
            if result.subpatch_actions[i, j]:
                cells[pr * sps + sr, pc * sps + sc] = 1.0
    px = np.kron(cells, np.ones((cell_px, cell_px)))
    return RasterObservation(n * cell_px, n * cell_px, px)
