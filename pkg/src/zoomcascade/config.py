"""Run configuration: one flat table of dotted keys, loaded from TOML and overridable per key.

Defaults are taken from the library's own dataclass defaults, so the shipped
``data/default.toml`` is documentation of them (a test keeps the two equal).
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .cascade import CostModel, PolicySpec
from .detectors import DetectorConfig, DetectorPair, ReplayArchive, ReplayDetectors, SimulatedDetectors
from .errors import ConfigError
from .metrics import MetricConfig
from .reward import Hyperparams
from .scene import GridLayout, ObservationConfig, build_grid
from .synth import SynthConfig
from .trainer import TrainConfig

SEED_ENV = "ZOOMCASCADE_SEED"

_DETECTOR_KEYS = ("char_size", "steepness", "loc_noise", "fp_rate", "fp_size_range", "fp_classes", "score_noise",
                  "fp_score_range", "unit_cost_ms")
_TRAIN_KEYS = ("reward_variant", "adam_beta1", "adam_beta2", "adam_eps", "log_every", "augment")


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def _build_defaults() -> dict[str, Any]:
    d: dict[str, Any] = {"seed": 0}
    d.update({"paths.scenes_dir": "scenes", "paths.cpnet_model": "models/cpnet.json",
              "paths.fpnet_model": "models/fpnet.json", "paths.report_dir": "reports"})
    d["policy.hidden"] = [128, 64]
    d.update({"grid.scene_side": 2400, "grid.patch_size": 600, "grid.subpatch_size": 320,
              "grid.subpatch_overlap": 40})
    obs = ObservationConfig()
    d["observation.raster_side"] = obs.raster_side
    d["observation.class_intensities"] = [obs.class_intensities[k] for k in sorted(obs.class_intensities)]
    hp = Hyperparams()
    d.update({"reward.alpha": hp.alpha, "reward.beta": hp.beta, "reward.sigma": hp.sigma,
              "reward.lambda": hp.lambda_, "reward.iou": TrainConfig().reward_iou})
    d.update({"train.learning_rate": hp.learning_rate, "train.batch_size": hp.batch_size,
              "train.epochs": hp.epochs})
    tc = TrainConfig()
    for k in _TRAIN_KEYS:
        d[f"train.{k}"] = getattr(tc, k)
    d.update({"detector.source": "sim", "detector.seed": 0, "detector.replay_path": ""})
    pair = DetectorPair()
    for tier in ("coarse", "fine"):
        cfg = pair[tier]
        for k in _DETECTOR_KEYS:
            d[f"detector.{tier}.{k}"] = _plain(getattr(cfg, k))
    for f in fields(CostModel):
        d[f"cost.{f.name}"] = f.default
    d["metric.iou_thresholds"] = list(MetricConfig().iou_thresholds)
    for f in fields(SynthConfig):
        if f.name != "seed":
            d[f"synth.{f.name}"] = _plain(getattr(SynthConfig(), f.name))
    spec = PolicySpec("sliding_lr")
    d.update({"eval.zoom_prob": spec.zoom_prob, "eval.patch_prob": spec.patch_prob,
              "eval.entropy_patch_threshold": spec.entropy_thresholds[0],
              "eval.entropy_subpatch_threshold": spec.entropy_thresholds[1], "eval.threads": 1})
    return d


DEFAULTS: dict[str, Any] = _build_defaults()


def flatten(table: Mapping, prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for k, v in table.items():
        key = f"{prefix}{k}"
        if isinstance(v, Mapping):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key: str, value):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} expects true/false, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} expects a number, got {value!r}")
        return float(value)
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} expects an integer, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{key} expects a list, got {value!r}")
        return value
    if not isinstance(value, str):
        raise ConfigError(f"{key} expects a string, got {value!r}")
    return value


def parse_assignment(text: str) -> tuple[str, Any]:
    """Parse ``key=value`` where value is a TOML literal; bare words are taken as strings."""
    key, sep, raw = text.partition("=")
    key, raw = key.strip(), raw.strip()
    if not sep or not key:
        raise ConfigError(f"expected key=value, got {text!r}")
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key, value


def default_config_path() -> Path:
    return Path(str(resources.files("zoomcascade") / "data" / "default.toml"))


@dataclass
class RunConfig:
    values: dict[str, Any]

    @classmethod
    def load(cls, path=None, overrides: Mapping[str, Any] | None = None) -> "RunConfig":
        values = dict(DEFAULTS)
        if path is not None:
            try:
                with open(path, "rb") as fh:
                    table = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"cannot parse config {path}: {exc}") from None
            cls._merge(values, flatten(table))
        if SEED_ENV in os.environ:
            try:
                values["seed"] = int(os.environ[SEED_ENV])
            except ValueError:
                raise ConfigError(f"{SEED_ENV} must be an integer, got {os.environ[SEED_ENV]!r}") from None
        cls._merge(values, dict(overrides or {}))
        return cls(values)

    @staticmethod
    def _merge(values: dict, updates: Mapping[str, Any]) -> None:
        for key, v in updates.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _coerce(key, v)

    def __getitem__(self, key: str):
        return self.values[key]

    def to_dict(self) -> dict[str, Any]:
        return {k: self.values[k] for k in sorted(self.values)}

    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    def grid(self) -> GridLayout:
        v = self.values
        return build_grid(v["grid.scene_side"], v["grid.patch_size"], v["grid.subpatch_size"],
                          v["grid.subpatch_overlap"])

    def hidden(self) -> tuple[int, ...]:
        return tuple(int(h) for h in self.values["policy.hidden"])

    def observation(self) -> ObservationConfig:
        ci = self.values["observation.class_intensities"]
        return ObservationConfig(self.values["observation.raster_side"], {k: float(x) for k, x in enumerate(ci)})

    def hyper(self) -> Hyperparams:
        v = self.values
        return Hyperparams(alpha=v["reward.alpha"], beta=v["reward.beta"], sigma=v["reward.sigma"],
                           lambda_=v["reward.lambda"], learning_rate=v["train.learning_rate"],
                           batch_size=v["train.batch_size"], epochs=v["train.epochs"], seed=self.seed)

    def train_config(self, stage: str) -> TrainConfig:
        extra = {k: self.values[f"train.{k}"] for k in _TRAIN_KEYS}
        return TrainConfig(hyper=self.hyper(), stage=stage, observation=self.observation(),
                           reward_iou=self.values["reward.iou"], **extra)

    def detector_pair(self) -> DetectorPair:
        def tier(name: str) -> DetectorConfig:
            kw = {k: self.values[f"detector.{name}.{k}"] for k in _DETECTOR_KEYS}
            for k in ("fp_size_range", "fp_classes", "fp_score_range"):
                kw[k] = tuple(kw[k])
            return DetectorConfig(tier=name, **kw)

        return DetectorPair(tier("coarse"), tier("fine"))

    def detectors(self):
        source = self.values["detector.source"]
        if source == "sim":
            return SimulatedDetectors(self.detector_pair(), self.values["detector.seed"])
        if source == "replay":
            path = self.values["detector.replay_path"]
            if not path:
                raise ConfigError("detector.source = 'replay' needs detector.replay_path")
            return ReplayDetectors(ReplayArchive.load(path))
        raise ConfigError(f"detector.source must be 'sim' or 'replay', got {source!r}")

    def cost(self) -> CostModel:
        return CostModel(**{f.name: self.values[f"cost.{f.name}"] for f in fields(CostModel)})

    def metric(self) -> MetricConfig:
        return MetricConfig(tuple(float(t) for t in self.values["metric.iou_thresholds"]), self.values["reward.iou"])

    def synth(self, n_scenes: int | None = None) -> SynthConfig:
        kw = {f.name: self.values[f"synth.{f.name}"] for f in fields(SynthConfig) if f.name != "seed"}
        if n_scenes is not None:
            kw["n_scenes"] = n_scenes
        return SynthConfig(seed=self.seed, **kw)
