"""inverseflow: probabilistic inverse design.

Forward surrogates (single- and multi-fidelity Gaussian processes with
MCMC-fitted hyperparameters, PCA output reduction, cost-aware adaptive
sampling) paired with an explicit inverse surrogate (a conditional
invertible network built from affine coupling blocks).

Set INVERSEFLOW_THREADS before importing to cap the BLAS thread pools;
single-threaded runs are byte-for-byte reproducible.
"""

import os as _os

if "INVERSEFLOW_THREADS" in _os.environ:
    _n = _os.environ["INVERSEFLOW_THREADS"]
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                 "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        # no effect if numpy was imported first; the CLI entry point is early
        # enough
        _os.environ.setdefault(_var, _n)

__version__ = "0.1.0"

from . import cinn, gp, harness, mfgp, numcore, problems, reduce  # noqa: E402,F401
from .data import Dataset  # noqa: E402,F401
