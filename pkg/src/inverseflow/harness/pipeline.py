"""Composite forward surrogate over mixed scalar and profile outputs, and
the validation report container experiments fill in.

The surrogate holds one per-output model (single- or two-fidelity GP) for
each scalar and each retained profile coefficient; profile predictions are
decoded back through the basis and channel scaling, with variance
propagated linearly through both."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from ..data import HIGH, LOW, Dataset
from ..errors import ConfigurationError, ShapeError
from ..gp import GpModel, HyperPrior, McmcConfig, mcmc_fit
from ..mfgp import MfgpModel, mfgp_fit
from ..reduce import ChannelScaler, PcaBasis, pca_encode, pca_decode, pca_fit

BUNDLE_SCHEMA_VERSION = 1


def dimension_scaled_prior(d: int) -> HyperPrior:
    """Default prior with the inverse-length-scale center at 1/d, so the
    typical kernel exponent over standardized inputs stays O(1) in any
    dimension. At d=1 this is the module default."""
    return HyperPrior(beta_log_mean=float(np.log(1.0 / d)))


@dataclass
class ForwardSurrogate:
    """Per-output models plus the optional profile codec. Raw output layout
    is scalars first, then the concatenated profile entries."""

    models: list            # GpModel | MfgpModel, scalars then coefficients
    scalar_names: list[str]
    scaler: ChannelScaler | None = None
    basis: PcaBasis | None = None

    def __post_init__(self):
        if (self.scaler is None) != (self.basis is None):
            raise ConfigurationError("profile codec needs both scaler and basis")
        k = self.basis.k if self.basis is not None else 0
        if len(self.models) != len(self.scalar_names) + k:
            raise ShapeError("one model per scalar and per retained coefficient")

    @property
    def d(self) -> int:
        return self.models[0].d

    @property
    def n_scalars(self) -> int:
        return len(self.scalar_names)

    @property
    def k(self) -> int:
        return self.basis.k if self.basis is not None else 0

    @property
    def out_dim(self) -> int:
        return self.n_scalars + (self.scaler.D if self.scaler is not None else 0)

    def modeled_names(self) -> list[str]:
        return list(self.scalar_names) + [f"pca_{i+1}" for i in range(self.k)]

    def encode_profiles(self, profiles: np.ndarray) -> np.ndarray:
        return pca_encode(self.basis, self.scaler.transform(profiles))

    def decode_profiles(self, coeffs: np.ndarray) -> np.ndarray:
        return self.scaler.inverse(pca_decode(self.basis, coeffs))

    def predict_modeled_batch(self, Xq) -> tuple[np.ndarray, np.ndarray]:
        """Mean/variance per modeled column (scalars, then coefficients)."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        means = np.empty((Xq.shape[0], len(self.models)))
        varis = np.empty_like(means)
        for j, model in enumerate(self.models):
            means[:, j], varis[:, j] = model.predict_batch(Xq)
        return means, varis

    def _expand(self, coeff_mean, coeff_var):
        """Decode coefficient statistics into raw profile space."""
        prof_mean = self.decode_profiles(coeff_mean)
        entry_sd = np.repeat(self.scaler.stds, self.scaler.widths)
        prof_var = (coeff_var @ self.basis.components ** 2) * entry_sd ** 2
        return prof_mean, prof_var

    def predict_batch(self, Xq) -> tuple[np.ndarray, np.ndarray]:
        """Mean/variance in the raw output space [N x out_dim]."""
        means, varis = self.predict_modeled_batch(Xq)
        ns = self.n_scalars
        if self.basis is None:
            return means, varis
        prof_mean, prof_var = self._expand(means[:, ns:], varis[:, ns:])
        return (np.hstack([means[:, :ns], prof_mean]),
                np.hstack([varis[:, :ns], prof_var]))

    def predict_mean_batch(self, Xq) -> np.ndarray:
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        means = np.empty((Xq.shape[0], len(self.models)))
        for j, model in enumerate(self.models):
            means[:, j] = model.predict_mean_batch(Xq)
        ns = self.n_scalars
        if self.basis is None:
            return means
        return np.hstack([means[:, :ns], self.decode_profiles(means[:, ns:])])

    def to_json_dict(self) -> dict:
        return {
            "schema_version": BUNDLE_SCHEMA_VERSION,
            "scalar_names": list(self.scalar_names),
            "models": [{"kind": "mfgp" if isinstance(m, MfgpModel) else "gp",
                        "doc": m.to_json_dict()} for m in self.models],
            "scaler": self.scaler.to_json_dict() if self.scaler else None,
            "basis": self.basis.to_json_dict() if self.basis else None,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ForwardSurrogate":
        models = [MfgpModel.from_json_dict(m["doc"]) if m["kind"] == "mfgp"
                  else GpModel.from_json_dict(m["doc"]) for m in doc["models"]]
        scaler = ChannelScaler.from_json_dict(doc["scaler"]) if doc.get("scaler") else None
        basis = PcaBasis.from_json_dict(doc["basis"]) if doc.get("basis") else None
        return cls(models, list(doc["scalar_names"]), scaler, basis)

    def dumps(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def loads(cls, text: str) -> "ForwardSurrogate":
        return cls.from_json_dict(json.loads(text))


def fit_forward_surrogate(D: Dataset, profile_channels=(), pca_threshold=0.90,
                          pca_max_k: int | None = 8,
                          mcmc: McmcConfig | None = None,
                          seed: int = 0,
                          prior: HyperPrior | None = None) -> ForwardSurrogate:
    """Fit one model per output column of a tagged dataset.

    Trailing columns covered by ``profile_channels`` are treated as one
    concatenated profile: channel-standardized (statistics from the
    high-fidelity rows), reduced, and regressed coefficient-wise. Datasets
    holding both fidelities get the two-stage fit; otherwise a plain GP on
    whichever fidelity is present. The default prior scales the length
    scales with the input dimension.
    """
    mcmc = mcmc or McmcConfig()
    prior = prior or dimension_scaled_prior(D.d)
    prof_D = int(sum(profile_channels))
    if prof_D > D.m:
        raise ConfigurationError("profile channels exceed the output width")
    n_scalars = D.m - prof_D
    scalar_names = list(D.y_names[:n_scalars])

    scaler = basis = None
    coeffs = np.zeros((D.n, 0))
    if prof_D:
        profiles = D.Y[:, n_scalars:]
        ref = profiles[D.mask(HIGH)] if D.count(HIGH) >= 2 else profiles
        scaler = ChannelScaler.fit(ref, list(profile_channels))
        basis = pca_fit(scaler.transform(ref), pca_threshold, pca_max_k)
        coeffs = pca_encode(basis, scaler.transform(profiles))

    targets = np.hstack([D.Y[:, :n_scalars], coeffs])
    two_fid = D.count(LOW) >= 2 and D.count(HIGH) >= 2
    seeds = np.random.SeedSequence(seed).generate_state(targets.shape[1])
    models = []
    for j in range(targets.shape[1]):
        Dj = Dataset(D.X, targets[:, j].reshape(-1, 1), D.fidelity,
                     x_names=D.x_names, cost_ratio=D.cost_ratio)
        cfg_j = dataclasses.replace(mcmc, seed=int(seeds[j]))
        if two_fid:
            models.append(mfgp_fit(Dj, prior=prior, config=cfg_j))
        else:
            present = HIGH if Dj.count(HIGH) >= 2 else LOW
            models.append(mcmc_fit(Dj.subset(present), prior=prior,
                                   config=cfg_j))
    return ForwardSurrogate(models, scalar_names, scaler, basis)


@dataclass
class ValidationReport:
    """Forward accuracy rows (per modeled output) and inverse-consistency
    rows (per scalar objective), plus experiment-specific extras."""

    forward_rows: list[dict] = field(default_factory=list)
    inverse_rows: list[dict] = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        for row in self.forward_rows:
            if row["nrmse"] < 0.0:
                raise ValueError("nrmse cannot be negative")
            if row["r2"] > 1.0 + 1e-12:
                raise ValueError("r2 cannot exceed 1")
        for row in self.inverse_rows:
            if row["r2"] > 1.0 + 1e-12:
                raise ValueError("r2 cannot exceed 1")

    def to_json_dict(self) -> dict:
        return {"forward_rows": self.forward_rows,
                "inverse_rows": self.inverse_rows,
                "extras": self.extras}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ValidationReport":
        return cls(list(doc.get("forward_rows", [])),
                   list(doc.get("inverse_rows", [])),
                   dict(doc.get("extras", {})))

    def forward_csv_rows(self):
        return [(r["name"], r["nrmse"], r["r2"]) for r in self.forward_rows]

    def inverse_csv_rows(self):
        return [(r["name"], r["r2"], r["mean_abs_error"], r["mean_sample_std"])
                for r in self.inverse_rows]
