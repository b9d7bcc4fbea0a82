"""PCA codec for vector-valued outputs with explained-energy thresholding,
plus channel standardization for concatenated profiles.

Energy bookkeeping uses population (1/N) variance so that the mean training
reconstruction error equals the discarded eigenvalue mass exactly. Component
signs follow a fixed convention (largest-magnitude entry positive) so fits
are reproducible byte for byte.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ShapeError

log = logging.getLogger(__name__)

PCA_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class PcaBasis:
    mean: np.ndarray              # [D]
    components: np.ndarray        # [k x D], orthonormal rows
    singular_values: np.ndarray   # [k]
    energy_fractions: np.ndarray  # [k], non-increasing
    total_energy_captured: float

    def __post_init__(self):
        k = self.components.shape[0]
        if self.singular_values.shape != (k,) or self.energy_fractions.shape != (k,):
            raise ShapeError("component count inconsistent across fields")
        if k and np.any(np.diff(self.energy_fractions) > 1e-12):
            raise ValueError("energy fractions must be non-increasing")

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def D(self) -> int:
        return self.mean.shape[0]

    def to_json_dict(self) -> dict:
        return {
            "schema_version": PCA_SCHEMA_VERSION,
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "singular_values": self.singular_values.tolist(),
            "energy_fractions": self.energy_fractions.tolist(),
            "total_energy_captured": self.total_energy_captured,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "PcaBasis":
        return cls(
            np.asarray(doc["mean"], dtype=float),
            np.asarray(doc["components"], dtype=float).reshape(-1, len(doc["mean"])),
            np.asarray(doc["singular_values"], dtype=float),
            np.asarray(doc["energy_fractions"], dtype=float),
            float(doc["total_energy_captured"]),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def loads(cls, text: str) -> "PcaBasis":
        return cls.from_json_dict(json.loads(text))


def pca_fit(Y: np.ndarray, energy_threshold: float = 0.9,
            max_components: int | None = None) -> PcaBasis:
    """Center the rows of Y and keep the fewest principal directions whose
    cumulative explained variance reaches the threshold. ``max_components``
    clamps the count regardless of energy."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    N, D = Y.shape
    if N < 2:
        raise ConfigurationError("need at least 2 rows to fit a basis")
    if not 0.0 < energy_threshold <= 1.0:
        raise ConfigurationError("energy threshold must lie in (0, 1]")
    mean = Y.mean(axis=0)
    Yc = Y - mean
    U, s, Vt = np.linalg.svd(Yc, full_matrices=False)
    nonzero = s > (s[0] * 1e-12 if s.size and s[0] > 0.0 else 0.0)
    s = s[nonzero]
    Vt = Vt[nonzero]
    if s.size == 0:
        log.warning("data has zero variance, returning an empty basis")
        return PcaBasis(mean, np.zeros((0, D)), np.zeros(0), np.zeros(0), 0.0)
    energies = s ** 2
    fractions = energies / energies.sum()
    k = int(np.searchsorted(np.cumsum(fractions), energy_threshold - 1e-12) + 1)
    k = min(k, s.size)
    if max_components is not None:
        k = min(k, max_components)
    comps = Vt[:k].copy()
    # fixed sign: largest-magnitude entry of each direction positive
    for i in range(k):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0.0:
            comps[i] = -comps[i]
    return PcaBasis(mean, comps, s[:k].copy(), fractions[:k].copy(),
                    float(fractions[:k].sum()))


def pca_encode(basis: PcaBasis, y: np.ndarray) -> np.ndarray:
    """Coefficients of y in the retained basis. Accepts a single vector [D]
    or a batch [N x D]."""
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != basis.D:
        raise ShapeError(f"expected last axis {basis.D}, got {y.shape[-1]}")
    return (y - basis.mean) @ basis.components.T


def pca_decode(basis: PcaBasis, c: np.ndarray) -> np.ndarray:
    """Reconstruction from coefficients; single vector [k] or batch [N x k]."""
    c = np.asarray(c, dtype=float)
    if c.shape[-1] != basis.k:
        raise ShapeError(f"expected last axis {basis.k}, got {c.shape[-1]}")
    return basis.mean + c @ basis.components


@dataclass(frozen=True)
class ChannelScaler:
    """Scalar standardization per channel of a concatenated vector, so no
    channel dominates a joint basis through its physical units. Channel i
    occupies ``widths[i]`` consecutive entries."""

    widths: tuple[int, ...]
    means: np.ndarray   # [n_channels]
    stds: np.ndarray    # [n_channels]

    def __post_init__(self):
        if len(self.widths) != self.means.shape[0] or len(self.widths) != self.stds.shape[0]:
            raise ShapeError("one mean and std per channel required")
        if np.any(self.stds <= 0.0):
            raise ValueError("channel stds must be positive")

    @property
    def D(self) -> int:
        return int(sum(self.widths))

    @classmethod
    def fit(cls, Y: np.ndarray, widths: list[int]) -> "ChannelScaler":
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if Y.shape[1] != sum(widths):
            raise ShapeError("channel widths must sum to the row length")
        means, stds = [], []
        start = 0
        for w in widths:
            block = Y[:, start:start + w]
            means.append(float(block.mean()))
            sd = float(block.std())
            stds.append(sd if sd > 1e-12 else 1.0)
            start += w
        return cls(tuple(widths), np.array(means), np.array(stds))

    def _expand(self) -> tuple[np.ndarray, np.ndarray]:
        mu = np.concatenate([np.full(w, self.means[i])
                             for i, w in enumerate(self.widths)])
        sd = np.concatenate([np.full(w, self.stds[i])
                             for i, w in enumerate(self.widths)])
        return mu, sd

    def transform(self, Y: np.ndarray) -> np.ndarray:
        Y = np.asarray(Y, dtype=float)
        if Y.shape[-1] != self.D:
            raise ShapeError(f"expected last axis {self.D}, got {Y.shape[-1]}")
        mu, sd = self._expand()
        return (Y - mu) / sd

    def inverse(self, Z: np.ndarray) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        if Z.shape[-1] != self.D:
            raise ShapeError(f"expected last axis {self.D}, got {Z.shape[-1]}")
        mu, sd = self._expand()
        return Z * sd + mu

    def to_json_dict(self) -> dict:
        return {"widths": list(self.widths), "means": self.means.tolist(),
                "stds": self.stds.tolist()}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ChannelScaler":
        return cls(tuple(doc["widths"]), np.asarray(doc["means"], dtype=float),
                   np.asarray(doc["stds"], dtype=float))


def pca_fit_per_channel(Y: np.ndarray, widths: list[int],
                        energy_threshold: float = 0.9,
                        max_components: int | None = None) -> list[PcaBasis]:
    """Independent basis per channel, for when a joint basis is not wanted."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if Y.shape[1] != sum(widths):
        raise ShapeError("channel widths must sum to the row length")
    bases = []
    start = 0
    for w in widths:
        bases.append(pca_fit(Y[:, start:start + w], energy_threshold, max_components))
        start += w
    return bases
