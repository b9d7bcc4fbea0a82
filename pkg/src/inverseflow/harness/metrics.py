"""Accuracy metrics used across experiment reports."""

from __future__ import annotations

import numpy as np

from ..errors import RangeError, ShapeError


def _paired(pred: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred.shape != truth.shape:
        raise ShapeError("pred and truth must have the same length")
    if pred.shape[0] < 2:
        raise ShapeError("need at least 2 points")
    return pred, truth


def nrmse(pred: np.ndarray, truth: np.ndarray) -> float:
    """Root mean square error divided by the range of the true values."""
    pred, truth = _paired(pred, truth)
    span = float(truth.max() - truth.min())
    if span <= 0.0:
        raise RangeError("truth range is zero")
    return float(np.sqrt(np.mean((pred - truth) ** 2)) / span)


def r_squared(pred: np.ndarray, truth: np.ndarray) -> float:
    """1 - SS_res / SS_tot about the truth mean; negative when the
    prediction does worse than the mean."""
    pred, truth = _paired(pred, truth)
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    if ss_tot <= 0.0:
        raise RangeError("truth is constant")
    ss_res = float(np.sum((pred - truth) ** 2))
    return 1.0 - ss_res / ss_tot
