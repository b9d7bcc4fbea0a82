"""Benchmark forward problems.

Three stand-ins, in increasing size: a 2-D quadratic bowl whose inverse
sets are known circles, a classic 1-D correlated two-fidelity pair, and a
seeded 85-parameter problem with two scalar objectives and two 100-point
profiles whose variation is planted in six dominant modes, so the whole
reduce-then-regress pipeline has a known ground truth to hit.

All evaluations are pure functions of (seed, x).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import HIGH, LOW, Dataset
from .errors import DomainError, ShapeError

N_PROFILE = 100          # points per profile channel
N_DOMINANT_MODES = 6     # planted profile modes carrying most energy
N_MINOR_MODES = 4


# ---------------------------------------------------------------------------
# 2-D quadratic bowl
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ToyProblem:
    """y = ||W x - mu||^2 + noise on the box [-L_x/2, L_x/2]^d_x. The
    default configuration (W=I, mu=0) has circles as its noise-free inverse
    sets, which is what makes it a useful scoring oracle."""

    d_x: int = 2
    L_x: float = 4.0
    W: np.ndarray | None = None
    mu: np.ndarray | None = None
    noise_std: float = 0.5

    def __post_init__(self):
        W = np.eye(self.d_x) if self.W is None else np.asarray(self.W, dtype=float)
        mu = np.zeros(self.d_x) if self.mu is None else np.asarray(self.mu, dtype=float)
        if W.shape != (self.d_x, self.d_x) or mu.shape != (self.d_x,):
            raise ShapeError("W must be [d_x x d_x] and mu [d_x]")
        if self.noise_std < 0.0:
            raise ValueError("noise_std must be non-negative")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "mu", mu)

    @property
    def half_width(self) -> float:
        return self.L_x / 2.0

    def is_standard(self) -> bool:
        return (np.array_equal(self.W, np.eye(self.d_x))
                and np.array_equal(self.mu, np.zeros(self.d_x)))


def toy_forward(p: ToyProblem, x: np.ndarray,
                rng: np.random.Generator | None = None):
    """Objective value(s) at x ([d] or [N x d]); pass an rng to add the
    observation noise draw."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    if xb.shape[1] != p.d_x:
        raise ShapeError(f"x must have {p.d_x} entries")
    if np.any(np.abs(xb) > p.half_width + 1e-12):
        raise DomainError(f"x outside [-{p.half_width}, {p.half_width}]^{p.d_x}")
    r = xb @ p.W.T - p.mu
    y = np.sum(r ** 2, axis=1)
    if rng is not None and p.noise_std > 0.0:
        y = y + rng.normal(0.0, p.noise_std, size=y.shape)
    return float(y[0]) if single else y


def toy_objective(p: ToyProblem, x: np.ndarray):
    """Noise-free objective with no domain restriction, for scoring
    generated inverse samples (which may land outside the box)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    r = np.atleast_2d(x) @ p.W.T - p.mu
    y = np.sum(r ** 2, axis=1)
    return float(y[0]) if single else y


def toy_sample_x(p: ToyProblem, rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform draws from the problem box."""
    return rng.uniform(-p.half_width, p.half_width, size=(n, p.d_x))


def toy_inverse_oracle(p: ToyProblem, y: float) -> tuple[np.ndarray, float]:
    """(center, radius) of the exact noise-free inverse set for the standard
    configuration. Used only to score sampled inverse solutions."""
    if not p.is_standard():
        raise ValueError("inverse set is a circle only for W=I, mu=0")
    if y < 0.0:
        raise ValueError("y must be non-negative")
    return np.zeros(p.d_x), float(np.sqrt(y))


def toy_conditional_oracle(p: ToyProblem, y_obs: float, n: int,
                           seed: int = 0, max_batches: int = 4000) -> np.ndarray:
    """Exact draws from p(x | observed y) by rejection: propose x uniform on
    the box, accept against the Gaussian observation likelihood. Practical
    when the likelihood touches the achievable range of f; for y far above
    max f the acceptance rate collapses and this raises instead of spinning."""
    rng = np.random.default_rng(seed)
    out = np.empty((0, p.d_x))
    batch = max(4 * n, 4096)
    for _ in range(max_batches):
        x = toy_sample_x(p, rng, batch)
        f = toy_forward(p, x)
        accept_p = np.exp(-0.5 * ((y_obs - f) / p.noise_std) ** 2)
        keep = rng.random(batch) < accept_p
        out = np.vstack([out, x[keep]])
        if out.shape[0] >= n:
            return out[:n]
    raise RuntimeError(f"rejection sampler accepted {out.shape[0]}/{n} draws; "
                       f"y={y_obs} is too far outside the achievable range")


# ---------------------------------------------------------------------------
# 1-D two-fidelity pair
# ---------------------------------------------------------------------------

def synth_mf_pair(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """The classic correlated pair on [0,1]: an oscillatory high-fidelity
    curve and a shifted, sheared cheap version of it."""
    x = np.asarray(x, dtype=float)
    y_high = (6.0 * x - 2.0) ** 2 * np.sin(12.0 * x - 4.0)
    y_low = 0.5 * y_high + 10.0 * (x - 0.5) - 5.0
    return y_low, y_high


def mf_pair_dataset(x_low: np.ndarray, x_high: np.ndarray,
                    cost_ratio: float = 5.0) -> Dataset:
    """Bundle evaluations of both fidelities into one tagged dataset."""
    x_low = np.asarray(x_low, dtype=float).reshape(-1, 1)
    x_high = np.asarray(x_high, dtype=float).reshape(-1, 1)
    y_low, _ = synth_mf_pair(x_low[:, 0])
    _, y_high = synth_mf_pair(x_high[:, 0])
    X = np.vstack([x_low, x_high])
    Y = np.concatenate([y_low, y_high]).reshape(-1, 1)
    fid = np.array([LOW] * len(x_low) + [HIGH] * len(x_high), dtype=object)
    return Dataset(X, Y, fid, cost_ratio=cost_ratio)


# ---------------------------------------------------------------------------
# 85-parameter blade-like problem
# ---------------------------------------------------------------------------

def _smooth_curves(rng: np.random.Generator, n_curves: int,
                   n_points: int, n_harmonics: int = 4) -> np.ndarray:
    """Random smooth curves on [0,1] from a few low-order sinusoids."""
    s = np.linspace(0.0, 1.0, n_points)
    curves = np.zeros((n_curves, n_points))
    for k in range(n_curves):
        for j in range(1, n_harmonics + 1):
            amp = rng.normal(0.0, 1.0 / j)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            curves[k] += amp * np.sin(np.pi * j * s + phase)
    return curves


def _sparse_unit(rng: np.random.Generator, d: int, nnz: int) -> np.ndarray:
    """Unit vector supported on nnz random coordinates."""
    v = np.zeros(d)
    idx = rng.choice(d, size=nnz, replace=False)
    v[idx] = rng.normal(0.0, 1.0, size=nnz)
    return v / np.linalg.norm(v)


@dataclass
class BladeLikeProblem:
    """Seeded 85-in / 202-out problem on the unit box.

    Outputs are two bounded scalars (smooth low-order functions of sparse
    projections) and two concatenated 100-point profiles. Profile variation
    lives almost entirely in six orthonormal planted mode shapes whose
    amplitudes are smooth functionals of x, with four small extra modes so
    a 0.90-energy basis lands at six components rather than trivially
    soaking up everything. The pressure channel is scaled well above the
    swirl channel on purpose; joint reduction must standardize channels.

    The low fidelity is the same map plus a smooth x-dependent bias.

    At construction the problem probes itself on random inputs and records
    empirical output and profile-curvature bounds (with margin); evaluations
    elsewhere in the box are expected to respect them.
    """

    seed: int = 0
    d_in: int = 85
    output_bound: float = field(init=False)
    second_diff_bound: float = field(init=False)

    def __post_init__(self):
        rng = np.random.default_rng([self.seed, 101])
        n_modes = N_DOMINANT_MODES + N_MINOR_MODES
        # orthonormal smooth profile modes over the concatenated 200 entries
        raw = np.concatenate([
            _smooth_curves(rng, n_modes, N_PROFILE),
            _smooth_curves(rng, n_modes, N_PROFILE),
        ], axis=1)
        q, _ = np.linalg.qr(raw.T)
        self._modes = q.T[:n_modes]
        # near-equal dominant amplitudes: a 0.90-energy cut lands at 6 modes
        self._amps = np.concatenate([
            np.linspace(1.0, 0.75, N_DOMINANT_MODES),
            np.full(N_MINOR_MODES, 0.28),
        ])
        base = np.concatenate([
            1.0 + 0.5 * np.sin(np.pi * np.linspace(0.0, 1.0, N_PROFILE)),
            0.5 * np.cos(np.pi * np.linspace(0.0, 1.0, N_PROFILE)),
        ])
        self._base = base
        # amplitude functionals: orthonormal linear directions + mild sinusoid
        G = rng.normal(size=(self.d_in, n_modes))
        self._mode_w, _ = np.linalg.qr(G)
        self._mode_v = np.stack([_sparse_unit(rng, self.d_in, 10)
                                 for _ in range(n_modes)])
        # per-channel physical scaling applied after mode synthesis
        self._channel_scale = np.concatenate([
            np.full(N_PROFILE, 10.0), np.full(N_PROFILE, 1.0)])
        # scalar objectives from sparse projections
        self._u = np.stack([_sparse_unit(rng, self.d_in, 10) for _ in range(6)])
        # smooth low-fidelity bias, kept comparable to the planted signal so
        # the fidelities stay strongly correlated
        self._bias_curve = np.concatenate([
            0.05 * np.sin(2.0 * np.pi * np.linspace(0.0, 1.0, N_PROFILE)),
            0.025 * np.cos(np.pi * np.linspace(0.0, 1.0, N_PROFILE)),
        ])
        probe = np.random.default_rng([self.seed, 202]).random((100, self.d_in))
        scal, prof = blade_like_eval(self, probe, _skip_bounds=True)
        scal_l, prof_l = blade_like_eval(self, probe, fidelity=LOW,
                                         _skip_bounds=True)
        all_out = np.abs(np.concatenate(
            [scal.ravel(), prof.ravel(), scal_l.ravel(), prof_l.ravel()]))
        self.output_bound = float(all_out.max() * 1.5)
        d2 = np.abs(np.diff(np.concatenate([prof, prof_l]).reshape(-1, N_PROFILE),
                            n=2, axis=1))
        self.second_diff_bound = float(d2.max() * 1.5)

    def _amplitudes(self, Xc: np.ndarray) -> np.ndarray:
        lin = Xc @ self._mode_w
        wob = 0.3 * np.sin(np.pi * (Xc @ self._mode_v.T))
        return (lin + wob) * self._amps

    def _scalars(self, Xc: np.ndarray) -> np.ndarray:
        # linear terms dominate: physical responses in this regime are mostly
        # smooth trends, and that is also what GPs on ~10^2 points in 85
        # dimensions can resolve
        t = Xc @ self._u.T
        eff = 0.90 - 0.35 * t[:, 0] ** 2 + 0.12 * np.sin(np.pi * t[:, 1]) \
            + 0.55 * t[:, 2]
        rea = 0.50 + 0.6 * t[:, 3] + 0.2 * t[:, 4] ** 2 \
            + 0.1 * np.sin(np.pi * t[:, 5])
        return np.column_stack([eff, rea])

    def scalar_names(self) -> list[str]:
        return ["efficiency", "pseudo_reaction"]


def blade_like_eval(p: BladeLikeProblem, x: np.ndarray, fidelity: str = HIGH,
                    _skip_bounds: bool = False):
    """Evaluate the problem at x ([d_in] or [N x d_in]) in the unit box.
    Returns (scalars [N x 2], profiles [N x 200]); 1-D input gets 1-D
    outputs. Low fidelity adds the smooth bias."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != p.d_in:
        raise ShapeError(f"x must have {p.d_in} entries")
    Xc = X - 0.5
    amps = p._amplitudes(Xc)
    profiles = (p._base + amps @ p._modes) * p._channel_scale
    scalars = p._scalars(Xc)
    if fidelity == LOW:
        t = Xc @ p._u.T
        scalars = scalars + np.column_stack([
            0.08 + 0.2 * t[:, 1], -0.05 + 0.15 * t[:, 0]])
        profiles = profiles + np.outer(1.0 + t[:, 2], p._bias_curve) \
            * p._channel_scale
    elif fidelity != HIGH:
        raise ValueError(f"unknown fidelity {fidelity!r}")
    if not _skip_bounds:
        worst = max(np.abs(scalars).max(), np.abs(profiles).max())
        if worst > p.output_bound:
            raise ValueError(f"output {worst:.3g} exceeds the recorded bound "
                             f"{p.output_bound:.3g}")
    if single:
        return scalars[0], profiles[0]
    return scalars, profiles


def blade_doe(p: BladeLikeProblem, X_low: np.ndarray, X_high: np.ndarray,
              cost_ratio: float = 5.0) -> Dataset:
    """Evaluate both fidelities at the given designs and bundle the raw
    202-column outputs (2 scalars then 200 profile entries) into a Dataset."""
    rows, fids = [], []
    for X, fid in ((np.atleast_2d(X_low), LOW), (np.atleast_2d(X_high), HIGH)):
        if X.size == 0:
            continue
        scal, prof = blade_like_eval(p, X, fidelity=fid)
        rows.append(np.hstack([scal, prof]))
        fids.extend([fid] * X.shape[0])
    X_all = np.vstack([np.atleast_2d(a) for a in (X_low, X_high) if np.size(a)])
    Y_all = np.vstack(rows)
    names = p.scalar_names() + [f"p{i+1}" for i in range(N_PROFILE)] \
        + [f"s{i+1}" for i in range(N_PROFILE)]
    return Dataset(X_all, Y_all, np.array(fids, dtype=object),
                   y_names=names, cost_ratio=cost_ratio)
