"""Two-fidelity Gaussian process surrogate: a base model fitted on the
cheap data plus a discrepancy model fitted on residuals at the expensive
points, with cost-aware acquisition for growing the design.

Fitting is sequential: stage one regresses the low-fidelity values, stage
two regresses (high value - stage-one mean) at the high-fidelity inputs.
Predictions compose the two stages; their variances add. The observation
noise of the expensive data is absorbed into the discrepancy model's
residual term rather than carried separately.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .data import HIGH, LOW, Dataset
from .errors import ConfigurationError, ShapeError
from .gp import GpHyper, GpModel, HyperPrior, McmcConfig, kernel_eval, mcmc_fit

log = logging.getLogger(__name__)

MFGP_SCHEMA_VERSION = 1

POOL_PER_DIM = 500     # candidate pool rows per input dimension


@dataclass
class MfgpModel:
    """Composed surrogate. ``eta`` is trained on low-fidelity rows, ``delta``
    on residuals at the high-fidelity rows. ``epsilon_var`` is kept for
    bookkeeping but the noise it names lives inside delta's lambda^2."""

    eta: GpModel
    delta: GpModel
    epsilon_var: float = 0.0

    def __post_init__(self):
        if self.eta.d != self.delta.d:
            raise ShapeError("eta and delta input dimensions differ")

    @property
    def d(self) -> int:
        return self.eta.d

    def predict_batch(self, Xq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        m_eta, v_eta = self.eta.predict_batch(Xq)
        m_del, v_del = self.delta.predict_batch(Xq)
        return m_eta + m_del, v_eta + v_del

    def predict_mean_batch(self, Xq: np.ndarray) -> np.ndarray:
        return self.eta.predict_mean_batch(Xq) + self.delta.predict_mean_batch(Xq)

    def predict(self, x_star: np.ndarray) -> tuple[float, float]:
        mean, var = self.predict_batch(np.asarray(x_star, dtype=float).reshape(1, -1))
        return float(mean[0]), float(var[0])

    def to_json_dict(self) -> dict:
        return {"schema_version": MFGP_SCHEMA_VERSION,
                "eta": self.eta.to_json_dict(),
                "delta": self.delta.to_json_dict(),
                "epsilon_var": self.epsilon_var}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "MfgpModel":
        return cls(GpModel.from_json_dict(doc["eta"]),
                   GpModel.from_json_dict(doc["delta"]),
                   float(doc.get("epsilon_var", 0.0)))

    def dumps(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def loads(cls, text: str) -> "MfgpModel":
        return cls.from_json_dict(json.loads(text))


def mfgp_fit(D: Dataset, prior: HyperPrior | None = None,
             config: McmcConfig | None = None, output: int = 0,
             delta_prior: HyperPrior | None = None,
             delta_config: McmcConfig | None = None) -> MfgpModel:
    """Sequential two-stage fit on one output column. The same prior and
    MCMC settings serve both stages unless delta-specific ones are given."""
    n_low = D.count(LOW)
    n_high = D.count(HIGH)
    if n_low < 2 or n_high < 2:
        raise ConfigurationError(
            f"need at least 2 rows per fidelity, have {n_low} low / {n_high} high")
    D_low = D.subset(LOW)
    D_high = D.subset(HIGH)

    eta = mcmc_fit(D_low, prior, config, output=output)
    eta_at_high, _ = eta.predict_batch(D_high.X)
    residuals = D_high.column(output) - eta_at_high

    D_resid = Dataset(D_high.X, residuals.reshape(-1, 1),
                      np.array([HIGH] * n_high, dtype=object),
                      x_names=D.x_names, y_names=["residual"],
                      cost_ratio=D.cost_ratio)
    dc = delta_config or config
    if delta_config is None and config is not None:
        # decorrelate the two chains when both run off the same config
        dc = dataclasses.replace(config, seed=config.seed + 1)
    delta = mcmc_fit(D_resid, delta_prior or prior, dc, output=0)
    return MfgpModel(eta, delta)


def mf_cov(D: Dataset, h_eta: GpHyper, h_delta: GpHyper) -> np.ndarray:
    """Joint covariance of [discrepancy at high points; base process at high
    points; base process at low points] as a block matrix

        [[K_y, 0,   0   ],
         [0,   K_u, K_uw],
         [0,   K_uw^T, K_w]]

    Diagonal entries within each diagonal block are same-index pairs (the
    lambda^2 term contributes); no solver jitter is added. Inspection
    artifact only, the fit itself is sequential.
    """
    Xh = D.subset(HIGH).X if D.count(HIGH) else np.zeros((0, D.d))
    Xl = D.subset(LOW).X if D.count(LOW) else np.zeros((0, D.d))

    def block(A: np.ndarray, B: np.ndarray, h: GpHyper, diagonal: bool) -> np.ndarray:
        out = np.empty((A.shape[0], B.shape[0]))
        for i in range(A.shape[0]):
            for j in range(B.shape[0]):
                out[i, j] = kernel_eval(A[i], B[j], h,
                                        same_index=diagonal and i == j)
        return out

    K_y = block(Xh, Xh, h_delta, True)
    K_u = block(Xh, Xh, h_eta, True)
    K_w = block(Xl, Xl, h_eta, True)
    K_uw = block(Xh, Xl, h_eta, False)
    nh, nl = Xh.shape[0], Xl.shape[0]
    n = 2 * nh + nl
    M = np.zeros((n, n))
    M[:nh, :nh] = K_y
    M[nh:2 * nh, nh:2 * nh] = K_u
    M[nh:2 * nh, 2 * nh:] = K_uw
    M[2 * nh:, nh:2 * nh] = K_uw.T
    M[2 * nh:, 2 * nh:] = K_w
    return M


def mfgp_predict(model: MfgpModel, x_star: np.ndarray) -> tuple[float, float]:
    return model.predict(x_star)


# ---------------------------------------------------------------------------
# Cost-aware acquisition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AcquisitionResult:
    x: np.ndarray
    fidelity: str
    score: float
    table: np.ndarray  # [C x 2] scores, columns (low, high)

    def __post_init__(self):
        if not np.isclose(self.score, self.table.max()):
            raise ValueError("chosen score must be the table maximum")


def adaptive_select(model: MfgpModel, candidates: np.ndarray,
                    cost_ratio: float = 5.0) -> AcquisitionResult:
    """Pick the (point, fidelity) pair with the highest predictive variance
    per unit cost. A cheap run resolves only base-process uncertainty; an
    expensive run resolves both stages but costs ``cost_ratio`` as much.
    Ties go to the lowest candidate index, cheap before expensive.
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    if candidates.shape[0] < 1:
        raise ConfigurationError("candidate set is empty")
    if candidates.shape[1] != model.d:
        raise ShapeError("candidate width does not match model dimension")
    _, eta_var = model.eta.predict_batch(candidates)
    _, delta_var = model.delta.predict_batch(candidates)
    table = np.column_stack([eta_var, (eta_var + delta_var) / cost_ratio])
    flat = int(np.argmax(table))       # row-major: low index first, low fid first
    idx, col = divmod(flat, 2)
    return AcquisitionResult(candidates[idx].copy(),
                             LOW if col == 0 else HIGH,
                             float(table[idx, col]), table)


def sobol_pool(d: int, lo: np.ndarray, hi: np.ndarray, seed: int,
               size: int | None = None) -> np.ndarray:
    """Fresh low-discrepancy candidate pool scaled to a box, 500 rows per
    dimension by default."""
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (d,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (d,))
    n = size if size is not None else POOL_PER_DIM * d
    sampler = qmc.Sobol(d=d, scramble=True, seed=seed)
    with warnings.catch_warnings():
        # balance is irrelevant here; pools are scored, not integrated
        warnings.simplefilter("ignore", UserWarning)
        return qmc.scale(sampler.random(n), lo, hi)
