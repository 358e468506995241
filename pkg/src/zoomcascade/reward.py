"""Accuracy/cost reward for zoom decisions.

A zoomed tile earns ``(recall_fine - recall_coarse - beta) * n_objects``
(or ``(recall_fine - beta) * n_objects`` with the coarse detector removed);
untouched tiles earn nothing. The cost term rewards leaving tiles at low
resolution, linearly in the number of zooms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

VARIANTS = ("combined", "ablation")


@dataclass(frozen=True)
class Hyperparams:
    alpha: float = 0.8
    beta: float = 0.05
    sigma: float = 0.25
    lambda_: float = 0.25
    learning_rate: float = 1e-4
    batch_size: int = 64
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.batch_size < 1 or self.epochs < 0 or self.learning_rate <= 0:
            raise ValueError("batch_size >= 1, epochs >= 0 and learning_rate > 0 are required")


@dataclass(frozen=True)
class PatchOutcome:
    recall_fine: float
    recall_coarse: float
    n_objects: int

    def __post_init__(self):
        if not (0.0 <= self.recall_fine <= 1.0 and 0.0 <= self.recall_coarse <= 1.0):
            raise ValueError("recalls must lie in [0, 1]")
        if self.n_objects < 0:
            raise ValueError("n_objects must be non-negative")


@dataclass
class RewardBreakdown:
    r_acc: float
    r_cost: float
    total: float
    per_patch_terms: list[float] = field(default_factory=list)


def _arrays(outcomes: Sequence[PatchOutcome]):
    rf = np.array([o.recall_fine for o in outcomes], dtype=np.float64)
    rc = np.array([o.recall_coarse for o in outcomes], dtype=np.float64)
    n = np.array([o.n_objects for o in outcomes], dtype=np.float64)
    return rf, rc, n


def tile_gains(recall_fine, recall_coarse, n_objects, beta: float, variant: str = "combined"):
    """Accuracy term a tile earns if zoomed. Works elementwise on arrays of any shape."""
    rf = np.asarray(recall_fine, dtype=np.float64)
    n = np.asarray(n_objects, dtype=np.float64)
    if variant == "combined":
        return (rf - np.asarray(recall_coarse, dtype=np.float64) - beta) * n
    if variant == "ablation":
        return (rf - beta) * n
    raise ValueError(f"unknown reward variant {variant!r}")


def rewards_from_gains(gains, actions, sigma: float, lambda_: float):
    """Vectorised total reward; rows of ``gains``/``actions`` are independent samples."""
    gains = np.asarray(gains, dtype=np.float64)
    a = np.asarray(actions, dtype=np.float64)
    p = gains.shape[-1]
    return (a * gains).sum(axis=-1) + (sigma + lambda_) * (1.0 - a.sum(axis=-1)) / p


def _check(outcomes, a):
    a = np.asarray(a)
    if a.ndim != 1 or len(outcomes) != a.shape[0]:
        raise ValueError(f"{len(outcomes)} outcomes but action vector of shape {a.shape}")
    return a.astype(np.float64)


def accuracy_reward(outcomes: Sequence[PatchOutcome], a, beta: float) -> tuple[float, list[float]]:
    a = _check(outcomes, a)
    terms = a * tile_gains(*_arrays(outcomes), beta)
    return float(terms.sum()), terms.tolist()


def cost_reward(a, sigma: float, lambda_: float, P: int) -> float:
    if P <= 0:
        raise ValueError("P must be positive")
    if len(a) != P:
        raise ValueError(f"action vector has length {len(a)}, expected {P}")
    return (sigma + lambda_) * (1.0 - float(np.sum(a))) / P


def _breakdown(terms: np.ndarray, a, hyper: Hyperparams) -> RewardBreakdown:
    r_acc = float(terms.sum())
    r_cost = cost_reward(a, hyper.sigma, hyper.lambda_, len(a))
    return RewardBreakdown(r_acc, r_cost, r_acc + r_cost, terms.tolist())


def combined_reward(outcomes: Sequence[PatchOutcome], a, hyper: Hyperparams = Hyperparams()) -> RewardBreakdown:
    af = _check(outcomes, a)
    return _breakdown(af * tile_gains(*_arrays(outcomes), hyper.beta), a, hyper)


def ablation_reward(outcomes: Sequence[PatchOutcome], a, hyper: Hyperparams = Hyperparams()) -> RewardBreakdown:
    af = _check(outcomes, a)
    return _breakdown(af * tile_gains(*_arrays(outcomes), hyper.beta, "ablation"), a, hyper)


def oracle_actions(gains, sigma: float, lambda_: float) -> np.ndarray:
    gains = np.asarray(gains, dtype=np.float64)
    return (gains > (sigma + lambda_) / gains.shape[-1]).astype(np.int8)


def oracle_policy(outcomes: Sequence[PatchOutcome], hyper: Hyperparams = Hyperparams(), P: int | None = None,
                  variant: str = "combined") -> np.ndarray:
    """Exact reward maximiser: the reward separates per tile, so zoom iff gain beats the per-zoom cost."""
    if P is not None and P != len(outcomes):
        raise ValueError(f"P={P} but {len(outcomes)} outcomes")
    return oracle_actions(tile_gains(*_arrays(outcomes), hyper.beta, variant), hyper.sigma, hyper.lambda_)
