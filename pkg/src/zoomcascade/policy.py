"""Feed-forward zoom policies (CPNet / FPNet) with hand-written backprop.

A model maps a flattened raster to one zoom probability per tile through
rectifier hidden layers and a logistic output layer. Action probabilities
factor as independent Bernoullis, so the log-likelihood of an action vector is
a sum over tiles and its gradient flows back through the logits only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rng as rng_mod
from .errors import StaleCacheError
from .scene import RasterObservation

PROB_FLOOR = 1e-7
FORMAT_VERSION = 1


@dataclass
class PolicyModel:
    layer_dims: list[int]
    weights: list[np.ndarray]  # weights[l] has shape (layer_dims[l], layer_dims[l + 1])
    biases: list[np.ndarray]
    activation: str = "relu"
    trained_for: str = "cpnet"
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        if len(self.layer_dims) < 2:
            raise ValueError("a policy needs at least an input and an output layer")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_dims[l], self.layer_dims[l + 1]) or b.shape != (self.layer_dims[l + 1],):
                raise ValueError(f"layer {l} parameters do not match layer_dims {self.layer_dims}")

    @property
    def n_inputs(self) -> int:
        return self.layer_dims[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_dims[-1]

    def parameters(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> "PolicyModel":
        return PolicyModel(list(self.layer_dims), [w.copy() for w in self.weights],
                           [b.copy() for b in self.biases], self.activation, self.trained_for)

    def to_json(self, provenance: dict | None = None) -> str:
        doc = {"format_version": FORMAT_VERSION, "layer_dims": self.layer_dims, "activation": self.activation,
               "weights": [w.ravel().tolist() for w in self.weights],
               "biases": [b.tolist() for b in self.biases], "trained_for": self.trained_for}
        if provenance is not None:
            doc["provenance"] = provenance
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "PolicyModel":
        doc = json.loads(text)
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format_version {doc.get('format_version')!r}")
        dims = [int(d) for d in doc["layer_dims"]]
        weights = [np.asarray(w, dtype=np.float64).reshape(dims[l], dims[l + 1])
                   for l, w in enumerate(doc["weights"])]
        biases = [np.asarray(b, dtype=np.float64) for b in doc["biases"]]
        return cls(dims, weights, biases, doc.get("activation", "relu"), doc.get("trained_for", "cpnet"))

    def save(self, path, provenance: dict | None = None) -> None:
        Path(path).write_text(self.to_json(provenance), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "PolicyModel":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def init_model(layer_dims: Sequence[int], seed: int = 0, trained_for: str = "cpnet") -> PolicyModel:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = rng_mod.stream(seed, "init", trained_for)
    dims = [int(d) for d in layer_dims]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return PolicyModel(dims, weights, biases, "relu", trained_for)


def zero_model(layer_dims: Sequence[int], trained_for: str = "cpnet") -> PolicyModel:
    dims = [int(d) for d in layer_dims]
    return PolicyModel(dims, [np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])],
                       [np.zeros(b) for b in dims[1:]], "relu", trained_for)


def _sigmoid(z):
    # split by sign so neither branch overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class ForwardCache:
    model_id: int
    version: int
    single: bool
    activations: list[np.ndarray]  # inputs to each layer, batch-major
    pre: list[np.ndarray]  # hidden pre-activations
    s: np.ndarray


def _as_batch(model: PolicyModel, obs) -> tuple[np.ndarray, bool]:
    if isinstance(obs, RasterObservation):
        x = obs.flat()
    else:
        x = np.asarray(obs, dtype=np.float64)
    single = x.ndim == 1
    x = x.reshape(1, -1) if single else x.reshape(x.shape[0], -1)
    if x.shape[1] != model.n_inputs:
        raise ValueError(f"observation has {x.shape[1]} values, model expects {model.n_inputs}")
    return x, single


def forward(model: PolicyModel, obs) -> tuple[np.ndarray, ForwardCache]:
    """Zoom probabilities for one observation (shape ``(P,)``) or a batch (``(B, P)``)."""
    h, single = _as_batch(model, obs)
    acts, pres = [h], []
    last = len(model.weights) - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        if l < last:
            pres.append(z)
            h = np.maximum(z, 0.0)
            acts.append(h)
    s = _sigmoid(z)
    cache = ForwardCache(id(model), model.version, single, acts, pres, s)
    return (s[0] if single else s), cache


def temperature_scale(s, alpha: float):
    """Shrink probabilities toward 0.5: ``alpha * s + (1 - alpha) * (1 - s)``."""
    s = np.asarray(s, dtype=np.float64)
    return alpha * s + (1.0 - alpha) * (1.0 - s)


def sample_actions(s, rng_stream: np.random.Generator) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    return (rng_stream.random(s.shape) < s).astype(np.int8)


def greedy_actions(s) -> np.ndarray:
    return (np.asarray(s, dtype=np.float64) > 0.5).astype(np.int8)


def log_likelihood(s, a):
    """Sum over tiles of ``a log s + (1 - a) log(1 - s)``; batched inputs give one value per row."""
    s = np.clip(np.asarray(s, dtype=np.float64), PROB_FLOOR, 1.0 - PROB_FLOOR)
    a = np.asarray(a, dtype=np.float64)
    terms = a * np.log(s) + (1.0 - a) * np.log1p(-s)
    return terms.sum(axis=-1)


def backward(model: PolicyModel, cache: ForwardCache, a, scale, alpha: float = 1.0) -> list[np.ndarray]:
    """Gradient of ``sum_b scale_b * log_likelihood(temperature_scale(s_b, alpha), a_b)``.

    Returns gradients in ``model.parameters()`` order. ``scale`` may be a scalar
    or one value per batch row.
    """
    if cache.model_id != id(model) or cache.version != model.version:
        raise StaleCacheError("forward cache does not belong to the current model parameters")
    s = cache.s
    a = np.asarray(a, dtype=np.float64).reshape(s.shape)
    scale = np.broadcast_to(np.asarray(scale, dtype=np.float64).reshape(-1, 1), (s.shape[0], 1))
    st = np.clip(temperature_scale(s, alpha), PROB_FLOOR, 1.0 - PROB_FLOOR)
    dl_dst = a / st - (1.0 - a) / (1.0 - st)
    delta = scale * dl_dst * (2.0 * alpha - 1.0) * s * (1.0 - s)
    grads: list[np.ndarray] = []
    for l in range(len(model.weights) - 1, -1, -1):
        grads.append(delta.sum(axis=0))
        grads.append(cache.activations[l].T @ delta)
        if l > 0:
            delta = (delta @ model.weights[l].T) * (cache.pre[l - 1] > 0.0)
    grads.reverse()
    return grads


def policy_for_grid(kind: str, input_side: int, n_outputs: int, hidden: Sequence[int] = (128, 64),
                    seed: int = 0) -> PolicyModel:
    return init_model([input_side * input_side, *hidden, n_outputs], seed, kind)
