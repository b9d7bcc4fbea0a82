"""Single-fidelity Gaussian process regression with a squared-exponential
kernel and fully Bayesian hyperparameter inference via adaptive random-walk
Metropolis.

The kernel is k(a, b) = sigma^2 exp(-sum_j beta_j (a_j - b_j)^2), with
lambda^2 added on the diagonal (same-index pairs only). Hyperparameters
carry log-normal priors and are sampled in log space; predictions average
over the retained posterior draws.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .data import Dataset
from .errors import ConditioningError, ShapeError

log = logging.getLogger(__name__)

GP_SCHEMA_VERSION = 1

BASE_JITTER = 1e-8     # relative to sigma^2, added before any factorization
MAX_JITTER = 1e-4      # escalation ceiling, relative to sigma^2


@dataclass(frozen=True)
class GpHyper:
    """Kernel hyperparameters: signal std, per-dimension inverse length
    scales, residual/noise std."""

    sigma: float
    beta: np.ndarray
    lam: float

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))
        if self.sigma <= 0.0 or np.any(self.beta <= 0.0) or self.lam < 0.0:
            raise ValueError("require sigma > 0, beta > 0, lam >= 0")

    @property
    def d(self) -> int:
        return self.beta.shape[0]

    def to_json_dict(self) -> dict:
        return {"sigma": self.sigma, "beta": self.beta.tolist(), "lam": self.lam}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "GpHyper":
        return cls(doc["sigma"], np.asarray(doc["beta"], dtype=float), doc["lam"])


@dataclass(frozen=True)
class HyperPrior:
    """Independent log-normal priors: (mean, std) of the log of each
    component. Defaults are weakly informative for standardized data."""

    sigma_log_mean: float = 0.0
    sigma_log_std: float = 1.0
    beta_log_mean: float = 0.0
    beta_log_std: float = 1.0
    lam_log_mean: float = math.log(0.1)
    lam_log_std: float = 1.0

    def __post_init__(self):
        if min(self.sigma_log_std, self.beta_log_std, self.lam_log_std) <= 0.0:
            raise ValueError("prior stds must be positive")

    def log_means(self, d: int) -> np.ndarray:
        return np.array([self.sigma_log_mean] + [self.beta_log_mean] * d
                        + [self.lam_log_mean])

    def log_stds(self, d: int) -> np.ndarray:
        return np.array([self.sigma_log_std] + [self.beta_log_std] * d
                        + [self.lam_log_std])

    def log_density(self, h: GpHyper) -> float:
        """Sum of log-normal log densities evaluated at the hyperparameters."""
        vals = np.concatenate([[h.sigma], h.beta, [h.lam]])
        if np.any(vals <= 0.0):
            return -np.inf
        mu = self.log_means(h.d)
        sd = self.log_stds(h.d)
        lv = np.log(vals)
        return float(np.sum(-lv - np.log(sd) - 0.5 * np.log(2.0 * np.pi)
                            - 0.5 * ((lv - mu) / sd) ** 2))

    def to_json_dict(self) -> dict:
        return {
            "sigma_log_mean": self.sigma_log_mean, "sigma_log_std": self.sigma_log_std,
            "beta_log_mean": self.beta_log_mean, "beta_log_std": self.beta_log_std,
            "lam_log_mean": self.lam_log_mean, "lam_log_std": self.lam_log_std,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "HyperPrior":
        return cls(**doc)


# ---------------------------------------------------------------------------
# Kernel and covariance
# ---------------------------------------------------------------------------

def kernel_eval(a: np.ndarray, b: np.ndarray, h: GpHyper,
                same_index: bool = False) -> float:
    """Squared-exponential kernel between two points; the lambda^2 residual
    term contributes only when both arguments are the same training index."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape[0] != b.shape[0] or a.shape[0] != h.d:
        raise ShapeError("kernel arguments must match the hyperparameter dimension")
    val = h.sigma ** 2 * np.exp(-np.sum(h.beta * (a - b) ** 2))
    if same_index:
        val += h.lam ** 2
    return float(val)


def _weighted_sqdist(A: np.ndarray, B: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """sum_j beta_j (A_ij - B_kj)^2 for all row pairs, via one GEMM."""
    As = A * np.sqrt(beta)
    Bs = B * np.sqrt(beta)
    d2 = (np.sum(As ** 2, axis=1)[:, None] + np.sum(Bs ** 2, axis=1)[None, :]
          - 2.0 * As @ Bs.T)
    return np.maximum(d2, 0.0)


def cross_cov(A: np.ndarray, B: np.ndarray, h: GpHyper) -> np.ndarray:
    """Kernel matrix between two point sets, no diagonal residual term."""
    return h.sigma ** 2 * np.exp(-_weighted_sqdist(np.atleast_2d(A),
                                                   np.atleast_2d(B), h.beta))


def build_cov(X: np.ndarray, h: GpHyper) -> np.ndarray:
    """Training covariance: K_ij = k(x_i, x_j), diagonal sigma^2 + lambda^2,
    plus base jitter 1e-8 sigma^2 on the diagonal."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != h.d:
        raise ShapeError("X width must match hyperparameter dimension")
    K = cross_cov(X, X, h)
    K = 0.5 * (K + K.T)
    K[np.diag_indices_from(K)] = h.sigma ** 2 + h.lam ** 2 + BASE_JITTER * h.sigma ** 2
    return K


def _cholesky_with_escalation(K: np.ndarray, sigma: float) -> np.ndarray:
    """Lower Cholesky factor; escalates diagonal jitter by decades up to
    1e-4 sigma^2 before giving up."""
    jitter = 0.0
    for _ in range(6):
        try:
            return np.linalg.cholesky(K + jitter * np.eye(K.shape[0]))
        except np.linalg.LinAlgError:
            jitter = BASE_JITTER * sigma ** 2 * 10.0 if jitter == 0.0 else jitter * 10.0
            if jitter > MAX_JITTER * sigma ** 2 * (1.0 + 1e-12):
                break
    raise ConditioningError(
        f"covariance not positive definite after jitter escalation to {jitter:.1e}")


def _log_likelihood(X: np.ndarray, y: np.ndarray, h: GpHyper) -> float:
    """Gaussian marginal log likelihood, 2*pi constant included."""
    K = build_cov(X, h)
    L = _cholesky_with_escalation(K, h.sigma)
    alpha = scipy.linalg.cho_solve((L, True), y)
    n = y.shape[0]
    return float(-np.sum(np.log(np.diag(L))) - 0.5 * y @ alpha
                 - 0.5 * n * np.log(2.0 * np.pi))


def log_posterior(D: Dataset, h: GpHyper, prior: HyperPrior,
                  output: int = 0) -> float:
    """Log likelihood of the (raw, un-normalized) data plus log prior."""
    return _log_likelihood(D.X, D.column(output), h) + prior.log_density(h)


# ---------------------------------------------------------------------------
# Fitted model
# ---------------------------------------------------------------------------

@dataclass
class GpModel:
    """Training data, posterior hyperparameter draws, and cached Cholesky
    factorizations. Hyperparameters live in normalized coordinates; the
    normalization records map raw queries into that space."""

    X: np.ndarray
    y: np.ndarray
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    posterior_samples: list[GpHyper]
    prior: HyperPrior | None = None
    acceptance_rate: float | None = None
    log_posts: np.ndarray | None = None
    _chols: list[np.ndarray] = field(default_factory=list, repr=False)
    _alphas: list[np.ndarray] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.posterior_samples:
            raise ValueError("need at least one posterior sample")
        if not self._chols:
            self._rebuild_caches()

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def Xn(self) -> np.ndarray:
        return (self.X - self.x_mean) / self.x_std

    @property
    def yc(self) -> np.ndarray:
        return self.y - self.y_mean

    def _rebuild_caches(self) -> None:
        self._chols, self._alphas = [], []
        Xn, yc = self.Xn, self.yc
        for h in self.posterior_samples:
            L = _cholesky_with_escalation(build_cov(Xn, h), h.sigma)
            self._chols.append(L)
            self._alphas.append(scipy.linalg.cho_solve((L, True), yc))

    @classmethod
    def from_samples(cls, X: np.ndarray, y: np.ndarray,
                     samples: list[GpHyper], *, normalize: bool = True,
                     prior: HyperPrior | None = None,
                     acceptance_rate: float | None = None,
                     log_posts: np.ndarray | None = None) -> "GpModel":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        if normalize:
            x_mean = X.mean(axis=0)
            x_std = X.std(axis=0)
            x_std = np.where(x_std < 1e-12, 1.0, x_std)
            y_mean = float(y.mean())
        else:
            x_mean = np.zeros(X.shape[1])
            x_std = np.ones(X.shape[1])
            y_mean = 0.0
        return cls(X, y, x_mean, x_std, y_mean, list(samples), prior,
                   acceptance_rate, log_posts)

    def map_reduced(self) -> "GpModel":
        """Keep only the highest-posterior draw (fast predictions)."""
        if self.log_posts is None or len(self.posterior_samples) == 1:
            best = 0
        else:
            best = int(np.argmax(self.log_posts))
        return GpModel(self.X, self.y, self.x_mean, self.x_std, self.y_mean,
                       [self.posterior_samples[best]], self.prior,
                       self.acceptance_rate)

    def predict_batch(self, Xq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior-mixture predictive mean and variance at query rows."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        if Xq.shape[1] != self.d:
            raise ShapeError(f"query width {Xq.shape[1]} != model dimension {self.d}")
        Xqn = (Xq - self.x_mean) / self.x_std
        Xn = self.Xn
        means = np.empty((len(self.posterior_samples), Xq.shape[0]))
        varis = np.empty_like(means)
        for s, (h, L, alpha) in enumerate(zip(self.posterior_samples,
                                              self._chols, self._alphas)):
            Kx = cross_cov(Xn, Xqn, h)
            means[s] = Kx.T @ alpha
            V = scipy.linalg.solve_triangular(L, Kx, lower=True)
            varis[s] = h.sigma ** 2 + h.lam ** 2 - np.sum(V * V, axis=0)
        mean = means.mean(axis=0)
        var = varis.mean(axis=0) + (means ** 2).mean(axis=0) - mean ** 2
        neg = var < -1e-10
        if np.any(neg):
            log.warning("clamped %d negative predictive variances (min %.3e)",
                        int(neg.sum()), float(var.min()))
        return mean + self.y_mean, np.maximum(var, 0.0)

    def predict_mean_batch(self, Xq: np.ndarray) -> np.ndarray:
        """Posterior-mixture mean only; skips the variance solves, which
        dominate when querying many points."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        if Xq.shape[1] != self.d:
            raise ShapeError(f"query width {Xq.shape[1]} != model dimension {self.d}")
        Xqn = (Xq - self.x_mean) / self.x_std
        Xn = self.Xn
        acc = np.zeros(Xq.shape[0])
        for h, alpha in zip(self.posterior_samples, self._alphas):
            acc += cross_cov(Xqn, Xn, h) @ alpha
        return acc / len(self.posterior_samples) + self.y_mean

    def predict(self, x_star: np.ndarray) -> tuple[float, float]:
        mean, var = self.predict_batch(np.asarray(x_star, dtype=float).reshape(1, -1))
        return float(mean[0]), float(var[0])

    # -- serialization ------------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "schema_version": GP_SCHEMA_VERSION,
            "X": self.X.tolist(),
            "y": self.y.tolist(),
            "normalization": {"x_mean": self.x_mean.tolist(),
                              "x_std": self.x_std.tolist(),
                              "y_mean": self.y_mean},
            "posterior_samples": [h.to_json_dict() for h in self.posterior_samples],
            "prior_spec": self.prior.to_json_dict() if self.prior else None,
            "acceptance_rate": self.acceptance_rate,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "GpModel":
        norm = doc["normalization"]
        return cls(
            np.asarray(doc["X"], dtype=float),
            np.asarray(doc["y"], dtype=float),
            np.asarray(norm["x_mean"], dtype=float),
            np.asarray(norm["x_std"], dtype=float),
            float(norm["y_mean"]),
            [GpHyper.from_json_dict(s) for s in doc["posterior_samples"]],
            HyperPrior.from_json_dict(doc["prior_spec"]) if doc.get("prior_spec") else None,
            doc.get("acceptance_rate"),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def loads(cls, text: str) -> "GpModel":
        return cls.from_json_dict(json.loads(text))


def gp_predict(model: GpModel, x_star: np.ndarray) -> tuple[float, float]:
    return model.predict(x_star)


# ---------------------------------------------------------------------------
# MCMC fit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class McmcConfig:
    n_steps: int = 5000
    n_burn: int = 2000
    n_keep: int = 50
    seed: int = 0
    init_scale: float = 0.3
    target_accept: float = 0.25
    fix_lambda: float | None = None
    prior_only: bool = False

    def __post_init__(self):
        if self.n_steps <= self.n_burn:
            raise ValueError("n_steps must exceed n_burn")
        if self.n_keep < 1:
            raise ValueError("n_keep must be at least 1")

    def to_json_dict(self) -> dict:
        return {"n_steps": self.n_steps, "n_burn": self.n_burn,
                "n_keep": self.n_keep, "seed": self.seed,
                "init_scale": self.init_scale, "target_accept": self.target_accept,
                "fix_lambda": self.fix_lambda, "prior_only": self.prior_only}


def _run_chain(log_target, v0: np.ndarray, config: McmcConfig,
               rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, float]:
    """Adaptive random-walk Metropolis. Proposal scale adapts every 50 steps
    during burn-in toward the target acceptance rate, then freezes."""
    dim = v0.shape[0]
    v = v0.copy()
    lp = log_target(v)
    if not np.isfinite(lp):
        raise ValueError("MCMC initial point has non-finite log target")
    scale = config.init_scale
    chain = np.empty((config.n_steps, dim))
    lps = np.empty(config.n_steps)
    accepted_window = 0
    accepted_post = 0
    for t in range(config.n_steps):
        prop = v + scale * rng.standard_normal(dim)
        lp_prop = log_target(prop)
        if np.log(rng.random()) < lp_prop - lp:
            v, lp = prop, lp_prop
            accepted_window += 1
            if t >= config.n_burn:
                accepted_post += 1
        chain[t] = v
        lps[t] = lp
        if t < config.n_burn and (t + 1) % 50 == 0:
            rate = accepted_window / 50.0
            scale = float(np.clip(scale * np.exp(rate - config.target_accept),
                                  1e-3, 10.0))
            accepted_window = 0
        elif t >= config.n_burn and (t + 1) % 50 == 0:
            accepted_window = 0
    accept_rate = accepted_post / (config.n_steps - config.n_burn)
    return chain, lps, accept_rate


def mcmc_fit(D: Dataset, prior: HyperPrior | None = None,
             config: McmcConfig | None = None, output: int = 0,
             normalize: bool = True) -> GpModel:
    """Fit hyperparameters by MCMC on one output column.

    Inputs are standardized and the output centered before sampling (opt
    out with ``normalize=False``); the retained draws therefore live in
    normalized coordinates, recorded on the returned model. ``prior_only``
    in the config drops the data term (sampling the prior; diagnostic use).
    """
    prior = prior or HyperPrior()
    config = config or McmcConfig()
    X = np.atleast_2d(np.asarray(D.X, dtype=float))
    y = np.asarray(D.column(output), dtype=float)
    d = X.shape[1]
    if normalize:
        x_mean, x_std = X.mean(axis=0), X.std(axis=0)
        x_std = np.where(x_std < 1e-12, 1.0, x_std)
        y_mean = float(y.mean())
    else:
        x_mean, x_std = np.zeros(d), np.ones(d)
        y_mean = 0.0
    Xn = (X - x_mean) / x_std
    yc = y - y_mean

    mu = prior.log_means(d)
    sd = prior.log_stds(d)
    fixed_lam = config.fix_lambda
    # sampled vector: [log sigma, log beta_1..d] (+ [log lam] unless fixed)
    n_free = d + 1 + (0 if fixed_lam is not None else 1)

    def unpack(v: np.ndarray) -> GpHyper:
        lam = fixed_lam if fixed_lam is not None else float(np.exp(v[d + 1]))
        return GpHyper(float(np.exp(v[0])), np.exp(v[1:d + 1]), lam)

    def log_target(v: np.ndarray) -> float:
        # normal density on logs == log-normal prior plus the log-space Jacobian
        lp = float(np.sum(-0.5 * ((v - mu[:n_free]) / sd[:n_free]) ** 2
                          - np.log(sd[:n_free]) - 0.5 * np.log(2.0 * np.pi)))
        if config.prior_only:
            return lp
        try:
            return lp + _log_likelihood(Xn, yc, unpack(v))
        except ConditioningError:
            return -np.inf

    rng = np.random.default_rng(config.seed)
    v0 = mu[:n_free].copy()
    chain, lps, accept_rate = _run_chain(log_target, v0, config, rng)
    if not 0.05 <= accept_rate <= 0.7:
        log.warning("MCMC acceptance rate %.3f outside [0.05, 0.7]", accept_rate)

    keep_idx = np.unique(np.linspace(config.n_burn, config.n_steps - 1,
                                     config.n_keep).round().astype(int))
    samples = [unpack(chain[i]) for i in keep_idx]
    model = GpModel.from_samples(X, y, samples, normalize=normalize,
                                 prior=prior, acceptance_rate=accept_rate,
                                 log_posts=lps[keep_idx])
    if not normalize:
        return model
    # from_samples recomputes stats; make them exactly the ones sampled under
    model.x_mean, model.x_std, model.y_mean = x_mean, x_std, y_mean
    model._rebuild_caches()
    return model
