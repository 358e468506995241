"""Seeded synthetic scene generator: clustered objects with per-class log-normal sizes."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rng as rng_mod
from .errors import ConfigError
from .scene import BBox, Scene


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    scene_side: int = 2400
    n_scenes: int = 200
    cluster_rate: float = 4.0
    objects_per_cluster: tuple[int, int] = (5, 15)
    cluster_spread: float = 60.0
    size_log_mean: tuple[float, ...] = (math.log(12.0), math.log(120.0))
    size_log_std: tuple[float, ...] = (0.25, 0.3)
    class_mix: tuple[float, ...] = (0.5, 0.5)
    # draw one class per cluster (parking lots, neighbourhoods) instead of per object
    class_per_cluster: bool = True
    id_prefix: str = "scene_"

    def __post_init__(self):
        for name in ("objects_per_cluster", "size_log_mean", "size_log_std", "class_mix"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        k = len(self.class_mix)
        if k == 0 or len(self.size_log_mean) != k or len(self.size_log_std) != k:
            raise ConfigError("class_mix, size_log_mean and size_log_std must have one entry per class")
        if any(p < 0 for p in self.class_mix) or not math.isclose(sum(self.class_mix), 1.0, abs_tol=1e-9):
            raise ConfigError(f"class_mix must be a probability vector, got {self.class_mix}")
        lo, hi = self.objects_per_cluster
        if not 0 <= lo <= hi:
            raise ConfigError(f"objects_per_cluster range {self.objects_per_cluster} is degenerate")
        if self.cluster_rate < 0 or self.cluster_spread < 0 or any(s < 0 for s in self.size_log_std):
            raise ConfigError("rates, spreads and standard deviations must be non-negative")
        if self.scene_side <= 0 or self.n_scenes < 0:
            raise ConfigError("scene_side must be positive and n_scenes non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def generate_scene(config: SynthConfig, index: int) -> Scene:
    rng = rng_mod.stream(config.seed, "synth", index)
    side = float(config.scene_side)
    classes = np.arange(len(config.class_mix))
    mix = np.asarray(config.class_mix)
    lo, hi = config.objects_per_cluster
    boxes = []
    for _ in range(int(rng.poisson(config.cluster_rate))):
        center = rng.uniform(0.0, side, 2)
        count = int(rng.integers(lo, hi, endpoint=True))
        cluster_cls = int(rng.choice(classes, p=mix))
        for _ in range(count):
            cls = cluster_cls if config.class_per_cluster else int(rng.choice(classes, p=mix))
            cx, cy = np.clip(rng.normal(center, config.cluster_spread), 0.0, side)
            s = math.exp(rng.normal(config.size_log_mean[cls], config.size_log_std[cls]))
            aspect = rng.uniform(0.7, 1.4)
            r = math.sqrt(aspect)
            boxes.append(BBox(float(cx), float(cy), s * r, s / r, cls))
    return Scene(f"{config.id_prefix}{index:05d}", config.scene_side, config.scene_side, tuple(boxes))


def generate(config: SynthConfig) -> list[Scene]:
    return [generate_scene(config, k) for k in range(config.n_scenes)]


def write_dataset(scenes: Sequence[Scene], out_dir, config: SynthConfig | None = None,
                  extra: dict | None = None) -> Path:
    """Write one JSON file per scene plus ``manifest.json``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for s in scenes:
        s.save(out / f"{s.id}.json")
    manifest = {"ids": [s.id for s in scenes], "files": [f"{s.id}.json" for s in scenes]}
    if config is not None:
        manifest["config"] = config.to_dict()
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
    return path


def load_dataset(directory) -> list[Scene]:
    d = Path(directory)
    manifest = d / "manifest.json"
    if manifest.exists():
        files = json.loads(manifest.read_text(encoding="utf-8"))["files"]
        return [Scene.load(d / f) for f in files]
    return [Scene.load(p) for p in sorted(d.glob("*.json"))]
