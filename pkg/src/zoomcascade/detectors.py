"""Stand-ins for the coarse and fine detectors.

``SimulatedDetectors`` draws detections from a size-dependent logistic
detectability model; ``ReplayDetectors`` serves precomputed detections from a
JSON archive. Both expose the same ``detect`` method, which is all the trainer
and the evaluation harness rely on.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import rng as rng_mod
from .errors import ConfigError, ReplayLookupError
from .scene import BBox, Rect

TIERS = ("coarse", "fine")
MAX_ANALYTIC_LOC_NOISE = 0.05


@dataclass(frozen=True)
class DetectorConfig:
    tier: str
    char_size: float
    steepness: float = 4.0
    loc_noise: float = 0.03
    fp_rate: float = 0.0
    fp_size_range: tuple[float, float] = (8.0, 64.0)
    fp_classes: tuple[int, ...] = (0, 1)
    score_noise: float = 0.05
    fp_score_range: tuple[float, float] = (0.1, 0.5)
    unit_cost_ms: float = 10.0

    def __post_init__(self):
        if self.tier not in TIERS:
            raise ConfigError(f"tier must be one of {TIERS}, got {self.tier!r}")
        if self.char_size <= 0 or self.steepness <= 0:
            raise ConfigError("char_size and steepness must be positive")
        if self.loc_noise < 0 or self.fp_rate < 0 or self.unit_cost_ms < 0:
            raise ConfigError("loc_noise, fp_rate and unit_cost_ms must be non-negative")
        lo, hi = self.fp_size_range
        if not 0 < lo <= hi:
            raise ConfigError(f"bad fp_size_range {self.fp_size_range}")


def coarse_default(**overrides) -> DetectorConfig:
    return DetectorConfig(**{"tier": "coarse", "char_size": 24.0, "steepness": 4.0, "unit_cost_ms": 10.0,
                             **overrides})


def fine_default(**overrides) -> DetectorConfig:
    return DetectorConfig(**{"tier": "fine", "char_size": 8.0, "steepness": 4.0, "unit_cost_ms": 50.0,
                             **overrides})


@dataclass(frozen=True)
class DetectorPair:
    coarse: DetectorConfig = field(default_factory=coarse_default)
    fine: DetectorConfig = field(default_factory=fine_default)

    def __post_init__(self):
        if self.coarse.tier != "coarse" or self.fine.tier != "fine":
            raise ConfigError("detector pair tiers are swapped")
        if not self.coarse.char_size > self.fine.char_size:
            raise ConfigError("the coarse detector must have a larger characteristic size than the fine one")

    def __getitem__(self, tier: str) -> DetectorConfig:
        return self.coarse if tier == "coarse" else self.fine


@dataclass
class DetectionSet:
    patch_index: int
    subpatch_index: int | None
    boxes: list[BBox] = field(default_factory=list)


def detection_probability(config: DetectorConfig, w, h):
    """Logistic in object side length relative to ``char_size``."""
    side = np.sqrt(np.asarray(w, dtype=np.float64) * np.asarray(h, dtype=np.float64))
    return 1.0 / (1.0 + np.exp(-config.steepness * (side / config.char_size - 1.0)))


def detect(config: DetectorConfig, gt_in_tile: Sequence[BBox], rng_stream: np.random.Generator,
           tile_rect: Rect | None = None, patch_index: int = 0,
           subpatch_index: int | None = None) -> DetectionSet:
    """Sample one detector pass over a tile.

    ``tile_rect`` is only needed to place false positives; without it no
    false positives are drawn.
    """
    n = len(gt_in_tile)
    out: list[BBox] = []
    if n:
        w = np.array([b.w for b in gt_in_tile])
        h = np.array([b.h for b in gt_in_tile])
        p = detection_probability(config, w, h)
        hit = rng_stream.random(n) < p
        jitter = rng_stream.normal(size=(n, 4)) * config.loc_noise
        score_eps = rng_stream.normal(size=n) * config.score_noise
        for k, b in enumerate(gt_in_tile):
            if not hit[k]:
                continue
            jx, jy, jw, jh = jitter[k]
            out.append(BBox(b.cx + jx * b.w, b.cy + jy * b.h,
                            max(b.w * (1.0 + jw), 0.1 * b.w), max(b.h * (1.0 + jh), 0.1 * b.h),
                            b.class_id, float(min(max(p[k] + score_eps[k], 0.0), 1.0))))
    if tile_rect is not None and config.fp_rate > 0:
        m = int(rng_stream.poisson(config.fp_rate))
        x0, y0, x1, y1 = tile_rect
        lo, hi = np.log(config.fp_size_range)
        cx = rng_stream.uniform(x0, x1, m)
        cy = rng_stream.uniform(y0, y1, m)
        side = np.exp(rng_stream.uniform(lo, hi, m))
        s_lo, s_hi = config.fp_score_range
        score = rng_stream.uniform(s_lo, s_hi, m)
        cls = rng_stream.choice(np.asarray(config.fp_classes), size=m)
        out.extend(BBox(float(cx[k]), float(cy[k]), float(side[k]), float(side[k]), int(cls[k]), float(score[k]))
                   for k in range(m))
    return DetectionSet(patch_index, subpatch_index, out)


def expected_recall(config: DetectorConfig, gt_in_tile: Sequence[BBox]) -> float:
    if config.loc_noise > MAX_ANALYTIC_LOC_NOISE:
        raise ConfigError(f"expected_recall needs loc_noise <= {MAX_ANALYTIC_LOC_NOISE}, got {config.loc_noise}")
    if not gt_in_tile:
        return 1.0
    p = detection_probability(config, [b.w for b in gt_in_tile], [b.h for b in gt_in_tile])
    return float(math.fsum(p.tolist()) / len(gt_in_tile))


class SimulatedDetectors:
    """Seeded simulated detector source.

    Each (scene, tile, tier) gets its own counter-based stream, so a tile's
    detections are the same whichever policy or training rollout asks for them.
    """

    kind = "sim"

    def __init__(self, pair: DetectorPair = DetectorPair(), seed: int = 0):
        self.pair = pair
        self.seed = seed

    def detect(self, scene_id: str, patch: int, subpatch: int | None, tier: str,
               gt: Sequence[BBox], rect: Rect) -> DetectionSet:
        stream = rng_mod.stream(self.seed, "detect", scene_id, patch, subpatch, tier)
        return detect(self.pair[tier], gt, stream, rect, patch, subpatch)

    def expected_recall(self, tier: str, gt: Sequence[BBox]) -> float:
        return expected_recall(self.pair[tier], gt)


class ReplayArchive:
    """Read-only store of precomputed detections keyed by scene, tile and tier."""

    def __init__(self, entries: Mapping[tuple[str, int, int | None, str], list[BBox]] | None = None):
        self._entries = dict(entries or {})

    @classmethod
    def from_json(cls, text: str) -> "ReplayArchive":
        doc = json.loads(text)
        entries = {}
        for scene_id, body in doc.items():
            for tile in body.get("tiles", []):
                sub = tile.get("subpatch")
                key = (scene_id, int(tile["patch"]), None if sub is None else int(sub), tile["tier"])
                entries[key] = [BBox.from_dict(b) for b in tile.get("boxes", [])]
        return cls(entries)

    @classmethod
    def load(cls, path) -> "ReplayArchive":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def to_json(self) -> str:
        doc: dict = {}
        for (scene_id, patch, sub, tier), boxes in sorted(
                self._entries.items(), key=lambda kv: (kv[0][0], kv[0][1], -1 if kv[0][2] is None else kv[0][2],
                                                       kv[0][3])):
            doc.setdefault(scene_id, {"tiles": []})["tiles"].append(
                {"patch": patch, "subpatch": sub, "tier": tier, "boxes": [b.to_dict() for b in boxes]})
        return json.dumps(doc, indent=1)

    def record(self, scene_id: str, patch: int, subpatch: int | None, tier: str, boxes: Sequence[BBox]) -> None:
        self._entries[(scene_id, patch, subpatch, tier)] = list(boxes)

    def get(self, scene_id: str, patch: int, subpatch: int | None, tier: str) -> list[BBox]:
        try:
            return self._entries[(scene_id, patch, subpatch, tier)]
        except KeyError:
            raise ReplayLookupError(
                f"no replay detections for scene={scene_id!r} patch={patch} subpatch={subpatch} tier={tier}"
            ) from None


def replay_detect(store: ReplayArchive, scene_id: str, tile: tuple[int, int | None], tier: str) -> DetectionSet:
    patch, subpatch = tile
    return DetectionSet(patch, subpatch, list(store.get(scene_id, patch, subpatch, tier)))


class ReplayDetectors:
    kind = "replay"

    def __init__(self, archive: ReplayArchive):
        self.archive = archive

    def detect(self, scene_id: str, patch: int, subpatch: int | None, tier: str,
               gt: Sequence[BBox], rect: Rect) -> DetectionSet:
        return replay_detect(self.archive, scene_id, (patch, subpatch), tier)


class RecordingDetectors:
    """Wraps a source and copies every answer into a ``ReplayArchive``."""

    def __init__(self, inner, archive: ReplayArchive | None = None):
        self.inner = inner
        self.archive = archive if archive is not None else ReplayArchive()
        self.kind = inner.kind

    def detect(self, scene_id, patch, subpatch, tier, gt, rect):
        ds = self.inner.detect(scene_id, patch, subpatch, tier, gt, rect)
        self.archive.record(scene_id, patch, subpatch, tier, ds.boxes)
        return ds
