"""Minimal dense-network engine: evaluation, exact reverse-mode gradients,
Adam with decoupled weight decay, and learning-rate schedules.

Everything is float64 and deterministic given a seed. Networks are plain
containers of weight/bias arrays; evaluation never mutates them, so shared
read-only use is safe. Inputs may be a single vector ``(d,)`` or a batch
``(B, d)``; outputs follow the input's arrangement.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

log = logging.getLogger(__name__)

NET_SCHEMA_VERSION = 1

LEAKY_SLOPE = 0.01


@dataclass(frozen=True)
class Activation:
    """Per-layer activation: 'leaky_relu' with a negative slope, or 'identity'."""

    kind: str = "identity"
    slope: float = LEAKY_SLOPE

    def __post_init__(self):
        if self.kind not in ("leaky_relu", "identity"):
            raise ValueError(f"unknown activation kind: {self.kind!r}")

    def apply(self, z: np.ndarray) -> np.ndarray:
        if self.kind == "identity":
            return z
        return np.where(z >= 0.0, z, self.slope * z)

    def derivative(self, z: np.ndarray) -> np.ndarray:
        if self.kind == "identity":
            return np.ones_like(z)
        return np.where(z >= 0.0, 1.0, self.slope)


LEAKY = Activation("leaky_relu", LEAKY_SLOPE)
IDENTITY = Activation("identity")


@dataclass
class DenseNet:
    """Fully connected network: ordered (W, b) layers with per-layer activations.

    ``dropout_rates`` has one entry per hidden layer (all layers except the
    last); dropout is inverted (survivors rescaled at train time), so infer
    mode needs no correction and is fully deterministic.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[Activation]
    dropout_rates: list[float] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.weights)
        if len(self.biases) != n or len(self.activations) != n:
            raise ShapeError("weights, biases, activations must align layerwise")
        if not self.dropout_rates:
            self.dropout_rates = [0.0] * max(n - 1, 0)
        if len(self.dropout_rates) != max(n - 1, 0):
            raise ShapeError("need one dropout rate per hidden layer")
        for i in range(n - 1):
            if self.weights[i + 1].shape[1] != self.weights[i].shape[0]:
                raise ShapeError(
                    f"layer {i} outputs {self.weights[i].shape[0]} units but "
                    f"layer {i + 1} expects {self.weights[i + 1].shape[1]}"
                )
        for rate in self.dropout_rates:
            if not 0.0 <= rate < 1.0:
                raise ValueError("dropout rate must lie in [0, 1)")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def layer_dims(self) -> list[int]:
        return [self.in_dim] + [w.shape[0] for w in self.weights]

    @classmethod
    def create(cls, dims: list[int], rng: np.random.Generator, *,
               hidden_activation: Activation = LEAKY,
               out_activation: Activation = IDENTITY,
               dropout_rate: float = 0.0,
               zero_last: bool = False) -> "DenseNet":
        """He-initialized network with the given layer sizes.

        ``zero_last`` zeroes the final layer so the net starts as the constant
        zero map (used to make coupling blocks identity-initialized).
        """
        weights, biases, acts = [], [], []
        n_layers = len(dims) - 1
        for i in range(n_layers):
            fan_in = dims[i]
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(dims[i + 1], dims[i]))
            if zero_last and i == n_layers - 1:
                w = np.zeros_like(w)
            weights.append(w)
            biases.append(np.zeros(dims[i + 1]))
            acts.append(hidden_activation if i < n_layers - 1 else out_activation)
        rates = [dropout_rate] * (n_layers - 1)
        return cls(weights, biases, acts, rates)

    def params(self) -> list[np.ndarray]:
        """Flat parameter list: [W0, b0, W1, b1, ...]. Arrays are live views."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def copy(self) -> "DenseNet":
        return DenseNet(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
            list(self.dropout_rates),
        )

    def to_json_dict(self) -> dict:
        return {
            "schema_version": NET_SCHEMA_VERSION,
            "layer_dims": self.layer_dims,
            "activations": [{"kind": a.kind, "slope": a.slope} for a in self.activations],
            "dropout_rates": list(self.dropout_rates),
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "DenseNet":
        dims = doc["layer_dims"]
        weights = [
            np.asarray(doc["weights"][i], dtype=float).reshape(dims[i + 1], dims[i])
            for i in range(len(dims) - 1)
        ]
        biases = [np.asarray(b, dtype=float) for b in doc["biases"]]
        acts = [Activation(a["kind"], a.get("slope", LEAKY_SLOPE)) for a in doc["activations"]]
        return cls(weights, biases, acts, [float(r) for r in doc["dropout_rates"]])

    def dumps(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def loads(cls, text: str) -> "DenseNet":
        return cls.from_json_dict(json.loads(text))


class _ForwardCache:
    """Intermediates retained by a cached forward pass for the backward pass."""

    __slots__ = ("single", "inputs", "preacts", "masks")

    def __init__(self, single, inputs, preacts, masks):
        self.single = single
        self.inputs = inputs
        self.preacts = preacts
        self.masks = masks


def _as_batch(x: np.ndarray, dim: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != dim:
            raise ShapeError(f"{what} has length {x.shape[0]}, expected {dim}")
        return x[None, :], True
    if x.ndim == 2:
        if x.shape[1] != dim:
            raise ShapeError(f"{what} has width {x.shape[1]}, expected {dim}")
        return x, False
    raise ShapeError(f"{what} must be 1-D or 2-D, got ndim={x.ndim}")


def net_forward_cached(net: DenseNet, x: np.ndarray, mode: str = "infer",
                       rng: np.random.Generator | None = None):
    """Forward pass that keeps intermediates. Returns (output, cache).

    In train mode each hidden layer's activated output is dropped with its
    configured rate and survivors are rescaled by 1/(1-rate).
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    h, single = _as_batch(x, net.in_dim, "input")
    inputs, preacts, masks = [], [], []
    n_layers = len(net.weights)
    for i, (w, b, act) in enumerate(zip(net.weights, net.biases, net.activations)):
        inputs.append(h)
        z = h @ w.T + b
        preacts.append(z)
        h = act.apply(z)
        if i < n_layers - 1:
            rate = net.dropout_rates[i]
            if mode == "train" and rate > 0.0:
                if rng is None:
                    raise ValueError("train mode with dropout needs an rng")
                mask = (rng.random(h.shape) >= rate) / (1.0 - rate)
                h = h * mask
                masks.append(mask)
            else:
                masks.append(None)
    cache = _ForwardCache(single, inputs, preacts, masks)
    return (h[0] if single else h), cache


def net_eval(net: DenseNet, x: np.ndarray, mode: str = "infer",
             rng: np.random.Generator | None = None) -> np.ndarray:
    """Evaluate the network. Deterministic in infer mode."""
    out, _ = net_forward_cached(net, x, mode, rng)
    return out


def net_backward(net: DenseNet, cache: _ForwardCache,
                 upstream: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Reverse-mode pass given a cached forward.

    ``upstream`` is dL/d(output), shaped like the forward output. Returns
    (param_grads aligned with ``net.params()``, dL/d(input)).
    """
    g, single = _as_batch(upstream, net.out_dim, "upstream")
    if single != cache.single or g.shape[0] != cache.inputs[0].shape[0]:
        raise ShapeError("upstream does not match the cached forward pass")
    n_layers = len(net.weights)
    w_grads: list[np.ndarray] = [None] * n_layers
    b_grads: list[np.ndarray] = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        if i < n_layers - 1 and cache.masks[i] is not None:
            g = g * cache.masks[i]
        g = g * net.activations[i].derivative(cache.preacts[i])
        w_grads[i] = g.T @ cache.inputs[i]
        b_grads[i] = g.sum(axis=0)
        g = g @ net.weights[i]
    grads = []
    for wg, bg in zip(w_grads, b_grads):
        grads.append(wg)
        grads.append(bg)
    return grads, (g[0] if cache.single else g)


def net_grad(net: DenseNet, x: np.ndarray, upstream: np.ndarray,
             mode: str = "infer", rng: np.random.Generator | None = None):
    """Exact gradients of upstream . output w.r.t. parameters and input.

    With dropout active, pass the same seeded ``rng`` state as the paired
    ``net_eval`` call so the mask replays identically.
    """
    _, cache = net_forward_cached(net, x, mode, rng)
    return net_backward(net, cache, upstream)


# ---------------------------------------------------------------------------
# Adam with decoupled weight decay
# ---------------------------------------------------------------------------

@dataclass
class OptimState:
    """Adam accumulators shaped like the parameter list."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def for_params(cls, params: list[np.ndarray], *, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8,
                   weight_decay: float = 0.0) -> "OptimState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay,
        )


def adam_step(params: list[np.ndarray], grads: list[np.ndarray],
              state: OptimState, lr: float) -> tuple[list[np.ndarray], OptimState]:
    """One bias-corrected Adam update, in place on ``params``.

    Decoupled weight decay shrinks parameters before the Adam delta. A
    non-finite gradient rejects the whole step (parameters, moments and the
    step counter stay untouched) and logs a diagnostic.
    """
    if lr <= 0.0:
        raise ValueError("lr must be positive")
    if len(grads) != len(params):
        raise ShapeError("gradient list does not match parameter list")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ShapeError(f"param {i} has shape {p.shape}, grad {g.shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.isfinite(g).sum())
            log.warning("adam_step rejected: %d non-finite entries in grad %d "
                        "(max |finite| %.3g)", bad, i,
                        np.max(np.abs(g[np.isfinite(g)])) if np.isfinite(g).any() else 0.0)
            return params, state
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if state.weight_decay != 0.0:
            p -= lr * state.weight_decay * p
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# Learning-rate schedules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CosineAnneal:
    """Cosine decay from lr_start at step 0 to lr_end at total_steps."""

    lr_start: float
    lr_end: float
    total_steps: int


@dataclass(frozen=True)
class PlateauDrop:
    """Multiply the rate by ``factor`` whenever the best metric has not
    improved for ``patience`` epochs. ``metric_window`` smooths the metric
    by a trailing mean before comparison. Only ever decreases the rate.
    """

    lr_start: float
    factor: float = 0.1
    patience: int = 10
    metric_window: int = 1


LrSchedule = CosineAnneal | PlateauDrop


def lr_at(schedule: LrSchedule, step: int, metric_history=()) -> float:
    """Learning rate at ``step``.

    For PlateauDrop, ``step`` indexes epochs and ``metric_history`` holds the
    per-epoch metric values observed so far (epoch-mean NLL during training).
    """
    if step < 0:
        raise ValueError("step must be non-negative")
    if isinstance(schedule, CosineAnneal):
        s = min(step, schedule.total_steps)
        frac = s / schedule.total_steps
        return schedule.lr_end + 0.5 * (schedule.lr_start - schedule.lr_end) * (
            1.0 + np.cos(np.pi * frac))
    drops = 0
    best = np.inf
    stale = 0
    w = max(schedule.metric_window, 1)
    history = list(metric_history)[:step]
    smoothed = [float(np.mean(history[max(0, i + 1 - w):i + 1]))
                for i in range(len(history))]
    for value in smoothed:
        if value < best:
            best = value
            stale = 0
        else:
            stale += 1
            if stale >= schedule.patience:
                drops += 1
                stale = 0
    return schedule.lr_start * schedule.factor ** drops
