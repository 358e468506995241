"""REINFORCE training of zoom policies with a self-critical baseline.

Detectors are fixed black boxes: every tile's coarse and fine recall is
computed once per scene from its own seeded detector stream, so the sampled
rollout and the greedy baseline rollout always see the same detector output.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import policy as pn
from . import rng as rng_mod
from .errors import TrainingError
from .metrics import recall
from .reward import Hyperparams, VARIANTS, oracle_actions, rewards_from_gains, tile_gains
from .scene import GridLayout, ObservationConfig, RasterObservation, Scene, assign_boxes, crop_observation

log = logging.getLogger(__name__)

STAGES = ("cpnet", "fpnet")


@dataclass(frozen=True)
class TrainConfig:
    hyper: Hyperparams = Hyperparams()
    stage: str = "cpnet"
    reward_variant: str = "combined"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    log_every: int = 10
    observation: ObservationConfig = ObservationConfig()
    reward_iou: float = 0.5
    # random symmetries of each training input, see ``augment_batch``
    augment: bool = True

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.reward_variant not in VARIANTS:
            raise ValueError(f"reward_variant must be one of {VARIANTS}, got {self.reward_variant!r}")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")

    def n_actions(self, grid: GridLayout) -> int:
        return grid.n_patches if self.stage == "cpnet" else grid.n_subpatches

    def input_side(self, grid: GridLayout) -> int:
        side = self.observation.raster_side
        return side if self.stage == "cpnet" else self.observation.patch_side(grid)


@dataclass
class TrainLogRecord:
    epoch: int
    step: int
    mean_sampled_reward: float
    mean_baseline_reward: float
    mean_advantage: float
    mean_zoom_fraction: float
    gradient_norm: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class Samples:
    """Policy inputs with the per-tile detector outcomes needed to score any action."""

    x: np.ndarray  # (S, D)
    recall_fine: np.ndarray  # (S, P)
    recall_coarse: np.ndarray  # (S, P)
    n_objects: np.ndarray  # (S, P)
    keys: list[tuple[str, int | None]]
    # tiles form a square grid over a square image; rolls need non-overlapping tiles
    tiles_per_side: int = 0
    rollable: bool = False

    def __len__(self) -> int:
        return self.x.shape[0]

    def subset(self, idx) -> "Samples":
        return Samples(self.x[idx], self.recall_fine[idx], self.recall_coarse[idx], self.n_objects[idx],
                       [self.keys[i] for i in np.atleast_1d(idx)], self.tiles_per_side, self.rollable)

    def gains(self, beta: float, variant: str = "combined") -> np.ndarray:
        return tile_gains(self.recall_fine, self.recall_coarse, self.n_objects, beta, variant)


def _tile_recalls(detectors, scene: Scene, patch: int, subpatch: int | None, gt, rect,
                  expected: bool, reward_iou: float) -> tuple[float, float]:
    out = []
    for tier in ("fine", "coarse"):
        if expected:
            out.append(detectors.expected_recall(tier, gt))
        else:
            ds = detectors.detect(scene.id, patch, subpatch, tier, gt, rect)
            out.append(recall(gt, ds.boxes, reward_iou))
    return out[0], out[1]


def prepare_samples(scenes: Sequence[Scene], grid: GridLayout, config: TrainConfig, detectors,
                    expected: bool = False) -> Samples:
    """Build observations and tile outcomes for one training stage.

    CPNet gets one sample per scene (whole-scene raster, one tile per patch);
    FPNet gets one sample per patch (patch crop, one tile per subpatch).
    """
    xs, rf, rc, ns, keys = [], [], [], [], []
    for scene in scenes:
        obs = config.observation.scene_raster(scene)
        assigned = assign_boxes(scene, grid)
        if config.stage == "cpnet":
            row_f, row_c = [], []
            for i in range(grid.n_patches):
                f, c = _tile_recalls(detectors, scene, i, None, assigned.per_patch[i], grid.patch_rect(i),
                                     expected, config.reward_iou)
                row_f.append(f)
                row_c.append(c)
            xs.append(obs.flat())
            rf.append(row_f)
            rc.append(row_c)
            ns.append(assigned.counts)
            keys.append((scene.id, None))
        else:
            for i in range(grid.n_patches):
                row_f, row_c = [], []
                for j in range(grid.n_subpatches):
                    f, c = _tile_recalls(detectors, scene, i, j, assigned.per_subpatch[i][j],
                                         grid.subpatch_rect(i, j), expected, config.reward_iou)
                    row_f.append(f)
                    row_c.append(c)
                xs.append(crop_observation(obs, grid, i).flat())
                rf.append(row_f)
                rc.append(row_c)
                ns.append(assigned.subpatch_counts[i])
                keys.append((scene.id, i))
    p = config.n_actions(grid)
    d = config.input_side(grid) ** 2
    cpnet = config.stage == "cpnet"
    return Samples(np.asarray(xs, dtype=np.float64).reshape(-1, d), np.asarray(rf, dtype=np.float64).reshape(-1, p),
                   np.asarray(rc, dtype=np.float64).reshape(-1, p), np.asarray(ns, dtype=np.float64).reshape(-1, p),
                   keys, grid.patches_per_side if cpnet else grid.subpatches_per_side, cpnet)


def _transform(a: np.ndarray, dy: int, dx: int, k: int, flip: bool) -> np.ndarray:
    a = np.roll(a, (dy, dx), axis=(0, 1))
    a = np.rot90(a, k)
    return a[:, ::-1] if flip else a


def augment_batch(batch: Samples, rng: np.random.Generator) -> Samples:
    """Apply one random grid symmetry per sample to the image and its tile outcomes together.

    Symmetries are the eight rotations/reflections of the square, plus cyclic
    shifts by whole tiles when tiles do not overlap. Each maps tiles onto
    tiles exactly, so every transformed sample is a consistent
    (observation, outcome) pair.
    """
    n = batch.tiles_per_side
    b, d = batch.x.shape
    side = math.isqrt(d)
    cell = side // n
    x = batch.x.reshape(b, side, side).copy()
    arrays = [a.reshape(b, n, n).copy() for a in (batch.recall_fine, batch.recall_coarse, batch.n_objects)]
    shifts = rng.integers(0, n, size=(b, 2)) if batch.rollable else np.zeros((b, 2), dtype=np.int64)
    rots = rng.integers(0, 4, size=b)
    flips = rng.integers(0, 2, size=b)
    for i in range(b):
        dy, dx, k, fl = int(shifts[i, 0]), int(shifts[i, 1]), int(rots[i]), bool(flips[i])
        x[i] = _transform(x[i], dy * cell, dx * cell, k, fl)
        for a in arrays:
            a[i] = _transform(a[i], dy, dx, k, fl)
    rf, rc, ns = (a.reshape(b, n * n) for a in arrays)
    return Samples(x.reshape(b, d), rf, rc, ns, batch.keys, n, batch.rollable)


class Adam:
    """Adam ascent on a model's parameters, updated in place."""

    def __init__(self, model: pn.PolicyModel, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in model.parameters()]
        self.v = [np.zeros_like(p) for p in model.parameters()]
        self.t = 0

    def step(self, model: pn.PolicyModel, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(model.parameters(), grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p += self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        model.version += 1


def train_step(model: pn.PolicyModel, batch: Samples, config: TrainConfig, rng: np.random.Generator,
               optimizer: Adam, epoch: int = 0, step: int = 0) -> TrainLogRecord:
    """One REINFORCE update on a mini-batch; mutates ``model`` and returns the step record."""
    hyper = config.hyper
    s, cache = pn.forward(model, batch.x)
    st = pn.temperature_scale(s, hyper.alpha)
    a = pn.sample_actions(st, rng)
    a_hat = pn.greedy_actions(s)
    gains = batch.gains(hyper.beta, config.reward_variant)
    r = rewards_from_gains(gains, a, hyper.sigma, hyper.lambda_)
    r_hat = rewards_from_gains(gains, a_hat, hyper.sigma, hyper.lambda_)
    adv = r - r_hat
    grads = pn.backward(model, cache, a, adv / len(batch), hyper.alpha)
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    record = TrainLogRecord(epoch, step, float(r.mean()), float(r_hat.mean()), float(adv.mean()),
                            float(a.mean()), norm)
    if not np.isfinite(norm):
        raise TrainingError(f"non-finite gradient at epoch {epoch}, step {step}", record)
    optimizer.step(model, grads)
    return record


def _mean_record(records: list[TrainLogRecord]) -> TrainLogRecord:
    last = records[-1]
    fields = ("mean_sampled_reward", "mean_baseline_reward", "mean_advantage", "mean_zoom_fraction",
              "gradient_norm")
    means = {f: float(np.mean([getattr(r, f) for r in records])) for f in fields}
    return TrainLogRecord(last.epoch, last.step, **means)


def train_samples(model: pn.PolicyModel, samples: Samples, config: TrainConfig, seed: int,
                  on_epoch: Callable[[int, pn.PolicyModel], None] | None = None,
                  ) -> tuple[pn.PolicyModel, list[TrainLogRecord]]:
    """Train a copy of ``model`` on prepared samples; the input model is left untouched."""
    if len(samples) == 0:
        raise ValueError("cannot train on an empty dataset")
    hyper = config.hyper
    model = model.copy()
    opt = Adam(model, hyper.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)
    action_rng = rng_mod.stream(seed, "actions", config.stage)
    augment_rng = rng_mod.stream(seed, "augment", config.stage)
    logs: list[TrainLogRecord] = []
    window: list[TrainLogRecord] = []
    step = 0
    for epoch in range(hyper.epochs):
        order = rng_mod.stream(seed, "shuffle", config.stage, epoch).permutation(len(samples))
        for start in range(0, len(order), hyper.batch_size):
            batch = samples.subset(order[start:start + hyper.batch_size])
            if config.augment:
                batch = augment_batch(batch, augment_rng)
            try:
                window.append(train_step(model, batch, config, action_rng, opt, epoch, step))
            except TrainingError as exc:
                # the failing step never reached the optimizer, so ``model`` is still the last good state
                exc.model = model
                raise
            step += 1
            if len(window) == config.log_every:
                logs.append(_mean_record(window))
                window = []
        if on_epoch is not None:
            on_epoch(epoch, model)
    if window:
        logs.append(_mean_record(window))
    return model, logs


def train(model: pn.PolicyModel, dataset: Sequence[Scene], grid: GridLayout, config: TrainConfig, detectors,
          seed: int, on_epoch=None) -> tuple[pn.PolicyModel, list[TrainLogRecord]]:
    if not dataset:
        raise ValueError("cannot train on an empty dataset")
    if model.n_outputs != config.n_actions(grid):
        raise ValueError(f"model has {model.n_outputs} outputs but stage {config.stage} needs "
                         f"{config.n_actions(grid)}")
    samples = prepare_samples(dataset, grid, config, detectors)
    log.info("training %s on %d samples for %d epochs", config.stage, len(samples), config.hyper.epochs)
    return train_samples(model, samples, config, seed, on_epoch)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    worst_index: int


REL_ERROR_FLOOR = 1e-6


def grad_check(model: pn.PolicyModel, observation, action, scale: float, alpha: float = 1.0,
               step: float = 1e-5, max_params: int | None = None, seed: int = 0,
               corrupt: bool = False) -> GradCheckReport:
    """Compare ``backward`` with central differences of ``scale * log_likelihood``.

    Relative error is ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)``;
    the floor keeps float round-off on near-zero components from dominating.
    ``max_params`` checks a seeded random subset instead of every parameter.
    ``corrupt`` perturbs the analytic gradient and exists only as a negative control.
    """
    if isinstance(observation, RasterObservation):
        observation = observation.flat()
    x = np.asarray(observation, dtype=np.float64)
    a = np.asarray(action, dtype=np.float64)
    s, cache = pn.forward(model, x)
    analytic = np.concatenate([g.ravel() for g in pn.backward(model, cache, a, scale, alpha)])
    if corrupt:
        # every component, so a sampled subset cannot miss the damage
        analytic = analytic * 1.5 + 1e-3

    def objective() -> float:
        s_, _ = pn.forward(model, x)
        return float(scale * pn.log_likelihood(pn.temperature_scale(s_, alpha), a))

    params = model.parameters()
    offsets = np.cumsum([0] + [p.size for p in params])
    indices = np.arange(offsets[-1])
    if max_params is not None and max_params < indices.size:
        indices = np.sort(rng_mod.stream(seed, "gradcheck").choice(indices, max_params, replace=False))
    worst, worst_idx = 0.0, -1
    for flat in indices:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        p = params[k].reshape(-1)
        j = flat - offsets[k]
        orig = p[j]
        p[j] = orig + step
        f_plus = objective()
        p[j] = orig - step
        f_minus = objective()
        p[j] = orig
        numeric = (f_plus - f_minus) / (2 * step)
        err = abs(analytic[flat] - numeric) / max(abs(analytic[flat]), abs(numeric), REL_ERROR_FLOOR)
        if err > worst:
            worst, worst_idx = err, int(flat)
    return GradCheckReport(worst, int(indices.size), worst_idx)


@dataclass
class MCReport:
    empirical: float
    exact: float
    gap: float
    stderr: float
    n_samples: int


MAX_EXHAUSTIVE_P = 12


def exact_expected_reward(probs, gains, sigma: float, lambda_: float) -> float:
    """Sum of ``pi(a) R(a)`` over every action vector."""
    probs = np.asarray(probs, dtype=np.float64)
    p = probs.shape[-1]
    if p > MAX_EXHAUSTIVE_P:
        raise ValueError(f"exhaustive expectation needs P <= {MAX_EXHAUSTIVE_P}, got {p}")
    actions = np.array(list(itertools.product((0, 1), repeat=p)), dtype=np.float64)
    weights = np.exp(pn.log_likelihood(np.broadcast_to(probs, actions.shape), actions))
    rewards = rewards_from_gains(np.broadcast_to(gains, actions.shape), actions, sigma, lambda_)
    return float(np.dot(weights, rewards))


def mc_estimate(probs, gains, sigma: float, lambda_: float, n_samples: int,
                rng: np.random.Generator) -> MCReport:
    probs = np.asarray(probs, dtype=np.float64)
    exact = exact_expected_reward(probs, gains, sigma, lambda_)
    actions = pn.sample_actions(np.broadcast_to(probs, (n_samples, probs.size)), rng)
    r = rewards_from_gains(np.broadcast_to(gains, actions.shape), actions, sigma, lambda_)
    stderr = float(r.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else 0.0
    emp = float(r.mean())
    return MCReport(emp, exact, abs(emp - exact), stderr, n_samples)


def mc_check(model: pn.PolicyModel, scene: Scene, grid: GridLayout, config: TrainConfig, detectors,
             n_samples: int, seed: int = 0, patch: int = 0) -> MCReport:
    """Monte-Carlo vs exhaustive expected reward under the temperature-scaled policy.

    Rewards use expected (analytic) recalls. For the FPNet stage ``patch``
    picks which patch of ``scene`` supplies the observation.
    """
    p = config.n_actions(grid)
    if p > MAX_EXHAUSTIVE_P:
        raise ValueError(f"mc_check enumerates 2^P actions and needs P <= {MAX_EXHAUSTIVE_P}, got {p}")
    samples = prepare_samples([scene], grid, config, detectors, expected=True)
    row = 0 if config.stage == "cpnet" else patch
    s, _ = pn.forward(model, samples.x[row])
    st = pn.temperature_scale(s, config.hyper.alpha)
    gains = samples.gains(config.hyper.beta, config.reward_variant)[row]
    return mc_estimate(st, gains, config.hyper.sigma, config.hyper.lambda_, n_samples,
                       rng_mod.stream(seed, "mc", n_samples))


@dataclass
class PolicyValueReport:
    policy_reward: float
    oracle_reward: float
    random_rewards: dict[float, float]

    @property
    def ratio(self) -> float:
        return self.policy_reward / self.oracle_reward


def policy_value(model: pn.PolicyModel, samples: Samples, hyper: Hyperparams, variant: str = "combined",
                 random_probs: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 1.0)) -> PolicyValueReport:
    """Mean reward of the greedy policy, the per-tile oracle and fixed-probability random policies.

    Random policies are scored by their exact expectation, which is linear in
    the zoom probability because the reward separates per tile.
    """
    gains = samples.gains(hyper.beta, variant)
    s, _ = pn.forward(model, samples.x)
    greedy = rewards_from_gains(gains, pn.greedy_actions(s), hyper.sigma, hyper.lambda_)
    best = rewards_from_gains(gains, oracle_actions(gains, hyper.sigma, hyper.lambda_), hyper.sigma, hyper.lambda_)
    p_tiles = gains.shape[1]
    rand = {}
    for q in random_probs:
        exp_r = q * gains.sum(axis=1) + (hyper.sigma + hyper.lambda_) * (1.0 - p_tiles * q) / p_tiles
        rand[float(q)] = float(exp_r.mean())
    return PolicyValueReport(float(greedy.mean()), float(best.mean()), rand)
