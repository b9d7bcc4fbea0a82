"""Conditional invertible network: a conditioning net feeding a chain of
affine coupling blocks with fixed per-block permutations.

Forward maps an input x and observation-derived conditioning vector to a
latent z with an exactly known log-Jacobian (the sum of the clamped scale
outputs); inverse is algebraic, so sampling latents and inverting yields
input candidates consistent with an observation. Training minimizes the
Gaussian-latent negative log likelihood end to end with Adam.

Scales are soft-clamped, s_hat = s_clamp * tanh(s_raw / s_clamp): without a
bound on exp(s) training overflows, and tanh keeps the map exactly
invertible. Dropout runs only inside the subnets during training; inversion
always evaluates in infer mode, so round trips are exact at inference.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericError, ShapeError
from .numcore import (
    DenseNet,
    LrSchedule,
    OptimState,
    PlateauDrop,
    adam_step,
    lr_at,
    net_backward,
    net_eval,
    net_forward_cached,
)

log = logging.getLogger(__name__)

CINN_SCHEMA_VERSION = 1

S_CLAMP_DEFAULT = 2.0


@dataclass
class CouplingBlock:
    """One affine coupling layer. The first ``split_index`` entries pass
    through unchanged and, concatenated with the conditioning vector, drive
    the scale and shift networks acting on the rest."""

    split_index: int
    scale_net: DenseNet
    shift_net: DenseNet
    s_clamp: float = S_CLAMP_DEFAULT

    def __post_init__(self):
        m = self.split_index
        if m < 1 or self.scale_net.out_dim < 1:
            raise ConfigurationError("split must leave both halves non-empty")
        if self.scale_net.out_dim != self.shift_net.out_dim:
            raise ShapeError("scale and shift nets must agree on output width")
        if self.scale_net.in_dim != self.shift_net.in_dim:
            raise ShapeError("scale and shift nets must agree on input width")
        if self.s_clamp <= 0.0:
            raise ConfigurationError("s_clamp must be positive")

    @property
    def M(self) -> int:
        return self.split_index + self.scale_net.out_dim

    @property
    def cond_dim(self) -> int:
        return self.scale_net.in_dim - self.split_index


@dataclass(frozen=True)
class FlowNormalization:
    """Input standardization and observation min-max records. Identity by
    default; training replaces them with data statistics."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_min: np.ndarray
    y_max: np.ndarray

    @classmethod
    def identity(cls, M: int, D_y: int) -> "FlowNormalization":
        return cls(np.zeros(M), np.ones(M), np.zeros(D_y), np.ones(D_y))

    @classmethod
    def from_data(cls, X: np.ndarray, Y: np.ndarray) -> "FlowNormalization":
        x_std = X.std(axis=0)
        x_std = np.where(x_std < 1e-12, 1.0, x_std)
        return cls(X.mean(axis=0), x_std, Y.min(axis=0), Y.max(axis=0))

    @property
    def y_width(self) -> np.ndarray:
        w = self.y_max - self.y_min
        return np.where(w < 1e-12, 1.0, w)

    def norm_x(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.x_mean) / self.x_std

    def denorm_x(self, xn: np.ndarray) -> np.ndarray:
        return np.asarray(xn, dtype=float) * self.x_std + self.x_mean

    def norm_y(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_min) / self.y_width

    def to_json_dict(self) -> dict:
        return {"x_mean": self.x_mean.tolist(), "x_std": self.x_std.tolist(),
                "y_min": self.y_min.tolist(), "y_max": self.y_max.tolist()}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "FlowNormalization":
        return cls(*(np.asarray(doc[k], dtype=float)
                     for k in ("x_mean", "x_std", "y_min", "y_max")))


@dataclass
class CinnModel:
    """Conditioning net, coupling chain, and the fixed permutation applied
    before each block (rebuilt from stored seeds, so serialization carries
    seeds rather than index arrays)."""

    M: int
    cond_net: DenseNet
    blocks: list[CouplingBlock]
    permutation_seeds: list[int]
    norm: FlowNormalization
    training_curve: list[float] | None = None   # per-epoch mean NLL, not serialized
    diverged_at_step: int | None = None         # set when training aborted early
    _perms: list[np.ndarray] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if len(self.permutation_seeds) != len(self.blocks):
            raise ConfigurationError("one permutation seed per block required")
        for b in self.blocks:
            if b.M != self.M:
                raise ShapeError("block width does not match model dimension")
        if not self._perms:
            self._perms = [np.random.default_rng(int(s)).permutation(self.M)
                           for s in self.permutation_seeds]

    @property
    def L(self) -> int:
        return len(self.blocks)

    @property
    def D_y(self) -> int:
        return self.cond_net.in_dim

    @property
    def D_c(self) -> int:
        return self.cond_net.out_dim

    def to_json_dict(self) -> dict:
        return {
            "schema_version": CINN_SCHEMA_VERSION,
            "M": self.M,
            "D_y": self.D_y,
            "D_c": self.D_c,
            "L": self.L,
            "split_indices": [b.split_index for b in self.blocks],
            "permutation_seeds": [int(s) for s in self.permutation_seeds],
            "s_clamp": self.blocks[0].s_clamp if self.blocks else S_CLAMP_DEFAULT,
            "cond_net": self.cond_net.to_json_dict(),
            "blocks": [{"s_net": b.scale_net.to_json_dict(),
                        "t_net": b.shift_net.to_json_dict()} for b in self.blocks],
            "normalization": self.norm.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "CinnModel":
        s_clamp = float(doc["s_clamp"])
        blocks = [CouplingBlock(int(m), DenseNet.from_json_dict(b["s_net"]),
                                DenseNet.from_json_dict(b["t_net"]), s_clamp)
                  for m, b in zip(doc["split_indices"], doc["blocks"])]
        return cls(int(doc["M"]), DenseNet.from_json_dict(doc["cond_net"]),
                   blocks, [int(s) for s in doc["permutation_seeds"]],
                   FlowNormalization.from_json_dict(doc["normalization"]))

    def dumps(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def loads(cls, text: str) -> "CinnModel":
        return cls.from_json_dict(json.loads(text))

    def params(self) -> list[np.ndarray]:
        out = list(self.cond_net.params())
        for b in self.blocks:
            out.extend(b.scale_net.params())
            out.extend(b.shift_net.params())
        return out


@dataclass(frozen=True)
class InverseQuery:
    """An observation to invert, how many candidates to draw, and the seed
    the per-sample latents derive from."""

    target: np.ndarray
    sample_count: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "target",
                           np.atleast_1d(np.asarray(self.target, dtype=float)))
        if self.sample_count < 1:
            raise ConfigurationError("sample_count must be at least 1")
        if not np.all(np.isfinite(self.target)):
            raise ValueError("target must be finite")


@dataclass(frozen=True)
class DesignCandidate:
    """One inverse solution. Forward statistics stay None until the
    candidate is pushed through a forward surrogate."""

    x_hat: np.ndarray
    latent: np.ndarray
    forward_mean: np.ndarray | None = None
    forward_std: np.ndarray | None = None


# ---------------------------------------------------------------------------
# Coupling transport
# ---------------------------------------------------------------------------

def _as_rows(a: np.ndarray, width: int, what: str) -> tuple[np.ndarray, bool]:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        if a.shape[0] != width:
            raise ShapeError(f"{what} has length {a.shape[0]}, expected {width}")
        return a[None, :], True
    if a.ndim == 2 and a.shape[1] == width:
        return a, False
    raise ShapeError(f"{what} must be [{width}] or [B x {width}]")


def _cond_rows(c: np.ndarray, width: int, n_rows: int) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if c.ndim == 1:
        c = c[None, :]
    if c.shape[1] != width:
        raise ShapeError(f"conditioning width {c.shape[1]}, expected {width}")
    if c.shape[0] == 1 and n_rows > 1:
        c = np.broadcast_to(c, (n_rows, width))
    if c.shape[0] != n_rows:
        raise ShapeError("conditioning rows do not match the input batch")
    return c


def coupling_forward(block: CouplingBlock, x: np.ndarray, c: np.ndarray,
                     mode: str = "infer",
                     rng: np.random.Generator | None = None):
    """Affine coupling map. Returns (z, logdet); for a batch the log
    determinant is per row."""
    xb, single = _as_rows(x, block.M, "x")
    cb = _cond_rows(c, block.cond_dim, xb.shape[0])
    m = block.split_index
    u = np.concatenate([xb[:, :m], cb], axis=1)
    s_raw = net_eval(block.scale_net, u, mode, rng)
    t_out = net_eval(block.shift_net, u, mode, rng)
    s_hat = block.s_clamp * np.tanh(s_raw / block.s_clamp)
    z = np.concatenate([xb[:, :m], xb[:, m:] * np.exp(s_hat) + t_out], axis=1)
    if not np.all(np.isfinite(z)):
        bad = int(np.argwhere(~np.isfinite(z).all(axis=1))[0, 0])
        raise NumericError("non-finite coupling output", sample_index=bad)
    logdet = s_hat.sum(axis=1)
    return (z[0], float(logdet[0])) if single else (z, logdet)


def coupling_inverse(block: CouplingBlock, z: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Algebraic inverse of coupling_forward with the same conditioning.
    Always runs the subnets in infer mode."""
    zb, single = _as_rows(z, block.M, "z")
    cb = _cond_rows(c, block.cond_dim, zb.shape[0])
    m = block.split_index
    u = np.concatenate([zb[:, :m], cb], axis=1)
    s_raw = net_eval(block.scale_net, u)
    t_out = net_eval(block.shift_net, u)
    s_hat = block.s_clamp * np.tanh(s_raw / block.s_clamp)
    x = np.concatenate([zb[:, :m], (zb[:, m:] - t_out) * np.exp(-s_hat)], axis=1)
    if not np.all(np.isfinite(x)):
        bad = int(np.argwhere(~np.isfinite(x).all(axis=1))[0, 0])
        raise NumericError("non-finite coupling inverse", sample_index=bad)
    return x[0] if single else x


def condition(model: CinnModel, y_obs: np.ndarray) -> np.ndarray:
    """Deterministic conditioning vector for an observation (infer mode)."""
    yb, single = _as_rows(y_obs, model.D_y, "observation")
    c = net_eval(model.cond_net, model.norm.norm_y(yb))
    return c[0] if single else c


def cinn_forward(model: CinnModel, x: np.ndarray, y_obs: np.ndarray,
                 mode: str = "infer", rng: np.random.Generator | None = None):
    """Full chain: normalize, then per block permute and couple. Returns
    (z, total log determinant); permutations contribute nothing to it."""
    xb, single = _as_rows(x, model.M, "x")
    yb, _ = _as_rows(y_obs, model.D_y, "observation")
    c = net_eval(model.cond_net, model.norm.norm_y(yb), mode, rng)
    c = _cond_rows(c, model.D_c, xb.shape[0])
    h = model.norm.norm_x(xb)
    total = np.zeros(xb.shape[0])
    for l, (block, perm) in enumerate(zip(model.blocks, model._perms)):
        try:
            h, ld = coupling_forward(block, h[:, perm], c, mode, rng)
        except NumericError as err:
            raise NumericError(f"non-finite output in block {l}",
                               block_index=l,
                               sample_index=err.sample_index) from err
        total += ld
    return (h[0], float(total[0])) if single else (h, total)


def cinn_invert_one(model: CinnModel, z: np.ndarray, y_obs: np.ndarray) -> np.ndarray:
    """Map a latent back to input space under an observation: inverse blocks
    in reverse order, each followed by its inverse permutation."""
    zb, single = _as_rows(z, model.M, "z")
    yb, _ = _as_rows(y_obs, model.D_y, "observation")
    c = net_eval(model.cond_net, model.norm.norm_y(yb))
    c = _cond_rows(c, model.D_c, zb.shape[0])
    h = zb
    for l in range(model.L - 1, -1, -1):
        try:
            h = coupling_inverse(model.blocks[l], h, c)
        except NumericError as err:
            raise NumericError(f"non-finite inverse in block {l}",
                               block_index=l,
                               sample_index=err.sample_index) from err
        hp = np.empty_like(h)
        hp[:, model._perms[l]] = h
        h = hp
    x = model.norm.denorm_x(h)
    return x[0] if single else x


def cinn_invert(model: CinnModel, query: InverseQuery) -> list[DesignCandidate]:
    """Draw ``sample_count`` standard-normal latents (seeded per sample as
    (seed, j), so any subset is reproducible) and invert them all under the
    tiled observation."""
    Z = np.stack([np.random.default_rng([query.seed, j]).standard_normal(model.M)
                  for j in range(query.sample_count)])
    Y = np.broadcast_to(query.target, (query.sample_count, model.D_y))
    X = cinn_invert_one(model, Z, Y)
    return [DesignCandidate(X[j].copy(), Z[j].copy())
            for j in range(query.sample_count)]


def postprocess(candidates: list[DesignCandidate],
                forward_model) -> list[DesignCandidate]:
    """Fill each candidate's forward mean and std via a surrogate exposing
    ``d`` and ``predict_batch(X) -> (mean, var)``."""
    if not candidates:
        return []
    M = candidates[0].x_hat.shape[0]
    if getattr(forward_model, "d", M) != M:
        raise ShapeError(f"forward model expects dimension {forward_model.d}, "
                         f"candidates have {M}")
    X = np.stack([cand.x_hat for cand in candidates])
    mean, var = forward_model.predict_batch(X)
    mean = np.asarray(mean, dtype=float)
    std = np.sqrt(np.maximum(np.asarray(var, dtype=float), 0.0))
    if mean.ndim == 1:
        mean = mean[:, None]
        std = std[:, None]
    return [dataclasses.replace(cand, forward_mean=mean[j].copy(),
                                forward_std=std[j].copy())
            for j, cand in enumerate(candidates)]


# ---------------------------------------------------------------------------
# Loss and training
# ---------------------------------------------------------------------------

def cinn_loss(z_batch: np.ndarray, logdet_batch: np.ndarray,
              theta: list[np.ndarray] | None = None, tau: float = 0.0) -> float:
    """Mean over the batch of (||z||^2 / 2 - logdet), plus tau * ||theta||^2
    when an explicit penalty is in use."""
    Z = np.atleast_2d(np.asarray(z_batch, dtype=float))
    ld = np.atleast_1d(np.asarray(logdet_batch, dtype=float))
    if Z.shape[0] != ld.shape[0]:
        raise ShapeError("latent batch and logdet batch must align")
    if Z.shape[0] == 0:
        raise ConfigurationError("batch is empty")
    loss = float(np.mean(0.5 * np.sum(Z ** 2, axis=1) - ld))
    if tau > 0.0 and theta is not None:
        loss += tau * float(sum(np.sum(p ** 2) for p in theta))
    return loss


@dataclass(frozen=True)
class CinnTrainConfig:
    """Architecture plus optimization settings.

    Exactly one of ``n_epochs`` (fixed dataset passed as arrays) or
    ``n_steps`` (online sampler) applies. Regularization picks one
    mechanism: decoupled weight decay in the optimizer or the explicit
    ``tau`` penalty in the loss, never both.
    """

    M: int
    D_y: int
    D_c: int = 16
    L: int = 4
    st_hidden: tuple[int, ...] = (128, 128)
    cond_hidden: tuple[int, ...] = (64,)
    s_clamp: float = S_CLAMP_DEFAULT
    batch_size: int = 128
    n_steps: int | None = None
    n_epochs: int | None = None
    lr: float = 1e-3
    lr_schedule: LrSchedule | None = None
    weight_decay: float = 0.0
    tau: float = 0.0
    dropout_rate: float = 0.0
    noise_std: float = 0.0
    seed: int = 0
    curve_every: int = 500
    checkpoint_every: int = 50

    def __post_init__(self):
        if self.M < 2:
            raise ConfigurationError("need input dimension at least 2 to split")
        if self.weight_decay > 0.0 and self.tau > 0.0:
            raise ConfigurationError(
                "pick one regularizer: weight_decay or tau, not both")
        if (self.n_steps is None) == (self.n_epochs is None):
            raise ConfigurationError("set exactly one of n_steps or n_epochs")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be at least 1")

    def to_json_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["st_hidden"] = list(self.st_hidden)
        doc["cond_hidden"] = list(self.cond_hidden)
        if self.lr_schedule is not None:
            doc["lr_schedule"] = {"kind": type(self.lr_schedule).__name__,
                                  **dataclasses.asdict(self.lr_schedule)}
        return doc


def cinn_create(config: CinnTrainConfig,
                norm: FlowNormalization | None = None) -> CinnModel:
    """Identity-initialized model: the coupling subnets' last layers start
    at zero, so the whole flow begins as a pure permutation chain."""
    rng = np.random.default_rng([config.seed, 1])
    m = config.M // 2
    cond_net = DenseNet.create([config.D_y, *config.cond_hidden, config.D_c],
                               rng, dropout_rate=config.dropout_rate)
    blocks = []
    for _ in range(config.L):
        dims = [m + config.D_c, *config.st_hidden, config.M - m]
        s_net = DenseNet.create(dims, rng, dropout_rate=config.dropout_rate,
                                zero_last=True)
        t_net = DenseNet.create(dims, rng, dropout_rate=config.dropout_rate,
                                zero_last=True)
        blocks.append(CouplingBlock(m, s_net, t_net, config.s_clamp))
    perm_seeds = [int(s) for s in
                  np.random.SeedSequence(config.seed).generate_state(config.L)]
    return CinnModel(config.M, cond_net, blocks, perm_seeds,
                     norm or FlowNormalization.identity(config.M, config.D_y))


def _train_step(model: CinnModel, params: list[np.ndarray], Xb: np.ndarray,
                Yb: np.ndarray, config: CinnTrainConfig,
                rng: np.random.Generator) -> tuple[float, list[np.ndarray]]:
    """One forward/backward pass. Returns (batch NLL, flat gradient list)."""
    B = Xb.shape[0]
    y_n = model.norm.norm_y(Yb)
    c, g_cache = net_forward_cached(model.cond_net, y_n, "train", rng)
    h = model.norm.norm_x(Xb)
    logdet = np.zeros(B)
    tapes = []
    for block, perm in zip(model.blocks, model._perms):
        h = h[:, perm]
        m = block.split_index
        x1, x2 = h[:, :m], h[:, m:]
        u = np.concatenate([x1, c], axis=1)
        s_raw, s_cache = net_forward_cached(block.scale_net, u, "train", rng)
        t_out, t_cache = net_forward_cached(block.shift_net, u, "train", rng)
        s_hat = block.s_clamp * np.tanh(s_raw / block.s_clamp)
        es = np.exp(s_hat)
        logdet += s_hat.sum(axis=1)
        tapes.append((s_cache, t_cache, s_hat, es, x2))
        h = np.concatenate([x1, x2 * es + t_out], axis=1)
    z = h
    nll = float(np.mean(0.5 * np.sum(z ** 2, axis=1) - logdet))
    if not np.isfinite(nll):
        return nll, []

    gz = z / B
    gc = np.zeros_like(c)
    block_grads: list[list[np.ndarray]] = []
    for l in range(len(model.blocks) - 1, -1, -1):
        block = model.blocks[l]
        s_cache, t_cache, s_hat, es, x2 = tapes[l]
        m = block.split_index
        gz1, gz2 = gz[:, :m], gz[:, m:]
        # d(nll)/d(s_hat): through z2 = x2*exp(s_hat)+t and through -logdet/B
        g_shat = gz2 * x2 * es - 1.0 / B
        g_sraw = g_shat * (1.0 - (s_hat / block.s_clamp) ** 2)
        s_grads, gu_s = net_backward(block.scale_net, s_cache, g_sraw)
        t_grads, gu_t = net_backward(block.shift_net, t_cache, gz2)
        gu = gu_s + gu_t
        gc += gu[:, m:]
        gh = np.concatenate([gz1 + gu[:, :m], gz2 * es], axis=1)
        gz = np.empty_like(gh)
        gz[:, model._perms[l]] = gh
        block_grads.append(s_grads + t_grads)
    cond_grads, _ = net_backward(model.cond_net, g_cache, gc)
    grads = list(cond_grads)
    for bg in reversed(block_grads):
        grads.extend(bg)
    if config.tau > 0.0:
        for g, p in zip(grads, params):
            g += 2.0 * config.tau * p
    return nll, grads


def cinn_train(data_source, config: CinnTrainConfig) -> CinnModel:
    """Train end to end (conditioning net and coupling chain together).

    ``data_source`` is either a tuple of arrays (X [N x M], Y [N x D_y]) run
    for ``n_epochs`` shuffled passes, or a callable ``sampler(rng, n)``
    returning fresh (X, Y) batches, run for ``n_steps`` steps. Records a
    per-epoch mean NLL curve on the model. A non-finite loss aborts training
    and returns the last checkpoint.
    """
    rng = np.random.default_rng([config.seed, 2])
    online = callable(data_source)
    if online:
        if config.n_steps is None:
            raise ConfigurationError("online sampler needs n_steps")
        calib_X, calib_Y = data_source(rng, max(4096, config.batch_size))
        norm = FlowNormalization.from_data(np.asarray(calib_X, dtype=float),
                                           np.asarray(calib_Y, dtype=float))
        total_steps = config.n_steps
        epoch_len = min(config.curve_every, max(total_steps, 1))
    else:
        if config.n_epochs is None:
            raise ConfigurationError("fixed dataset needs n_epochs")
        X = np.atleast_2d(np.asarray(data_source[0], dtype=float))
        Y = np.atleast_2d(np.asarray(data_source[1], dtype=float))
        if X.shape[0] != Y.shape[0]:
            raise ShapeError("X and Y row counts differ")
        if X.shape[1] != config.M or Y.shape[1] != config.D_y:
            raise ShapeError("data does not match configured dimensions")
        norm = FlowNormalization.from_data(X, Y)
        epoch_len = max(1, -(-X.shape[0] // config.batch_size))
        total_steps = config.n_epochs * epoch_len

    model = cinn_create(config, norm)
    params = model.params()
    opt = OptimState.for_params(params, weight_decay=config.weight_decay)
    curve: list[float] = []
    epoch_losses: list[float] = []
    checkpoint = [p.copy() for p in params]
    order = np.empty(0, dtype=int)

    for step in range(total_steps):
        if online:
            Xb, Yb = data_source(rng, config.batch_size)
            Xb = np.asarray(Xb, dtype=float)
            Yb = np.asarray(Yb, dtype=float)
        else:
            pos = step % epoch_len
            if pos == 0:
                order = rng.permutation(X.shape[0])
            take = order[pos * config.batch_size:(pos + 1) * config.batch_size]
            Xb, Yb = X[take], Y[take]
        if config.noise_std > 0.0:
            Yb = Yb + rng.normal(0.0, config.noise_std, size=Yb.shape)

        nll, grads = _train_step(model, params, Xb, Yb, config, rng)
        if not np.isfinite(nll):
            log.warning("non-finite loss at step %d, restoring checkpoint "
                        "and stopping", step)
            for p, saved in zip(params, checkpoint):
                p[...] = saved
            model.diverged_at_step = step
            break
        epoch_losses.append(nll)

        if isinstance(config.lr_schedule, PlateauDrop):
            lr = lr_at(config.lr_schedule, len(curve), curve)
        elif config.lr_schedule is not None:
            lr = lr_at(config.lr_schedule, step)
        else:
            lr = config.lr
        adam_step(params, grads, opt, lr)

        if (step + 1) % config.checkpoint_every == 0:
            checkpoint = [p.copy() for p in params]
        if (step + 1) % epoch_len == 0:
            curve.append(float(np.mean(epoch_losses)))
            epoch_losses = []
            log.info("epoch %d/%d: mean NLL %.4f (lr %.2e)", len(curve),
                     -(-total_steps // epoch_len), curve[-1], lr)
    if epoch_losses:
        curve.append(float(np.mean(epoch_losses)))
    model.training_curve = curve
    return model
