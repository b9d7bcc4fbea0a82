"""Experiment and task configurations, JSON round-trippable.

A config plus the code version determines every artifact byte for byte in
single-threaded mode, so configs are frozen and hashable into artifact
metadata headers. Unknown keys in a config file are rejected rather than
ignored; silent typos cost real compute here."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from ..errors import ConfigurationError


def _tupled(v):
    if isinstance(v, list):
        return tuple(_tupled(x) for x in v)
    return v


def from_doc(cls, doc: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigurationError(
            f"unknown {cls.__name__} keys: {', '.join(unknown)}")
    return cls(**{k: _tupled(v) for k, v in doc.items()})


def to_doc(cfg) -> dict:
    def convert(v):
        if isinstance(v, tuple):
            return [convert(x) for x in v]
        if isinstance(v, list):
            return [convert(x) for x in v]
        return v
    return {k: convert(v) for k, v in dataclasses.asdict(cfg).items()}


def load_config(cls, path: str):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigurationError(f"{path} is not valid JSON: {err}") from err
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path} must hold a JSON object")
    return from_doc(cls, doc)


@dataclass(frozen=True)
class ToyConfig:
    """2-D quadratic-bowl study: train the flow online, then sample the
    learned conditionals at a few targets and score them analytically."""

    seed: int = 0
    out_dir: str = "artifacts/toy"
    d_x: int = 2
    domain_width: float = 4.0
    noise_std: float = 0.5
    L: int = 4
    D_c: int = 16
    st_hidden: tuple[int, ...] = (128, 128)
    cond_hidden: tuple[int, ...] = (64,)
    batch_size: int = 128
    n_steps: int = 20000
    lr_start: float = 3e-3
    lr_end: float = 1e-5
    targets: tuple[float, ...] = (0.0, 2.0, 10.0)
    samples_per_target: int = 1000
    hist_bins: int = 60
    hist_half_width: float = 4.0


@dataclass(frozen=True)
class MfStudyConfig:
    """Cost-matched comparison of the two-fidelity surrogate grown by
    adaptive sampling against single-fidelity fits, on the 1-D pair."""

    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    out_dir: str = "artifacts/mf_study"
    cost_ratio: float = 5.0
    budgets: tuple[float, ...] = (3.0, 4.0, 5.0, 6.0)
    init_low: int = 5
    init_high: int = 2
    max_low: int | None = None
    n_test: int = 50
    mcmc_steps: int = 1500
    mcmc_burn: int = 500
    mcmc_keep: int = 20

    def __post_init__(self):
        if self.init_high < 2 or self.init_low < 2:
            raise ConfigurationError("need at least 2 seed points per fidelity")
        if tuple(sorted(self.budgets)) != self.budgets:
            raise ConfigurationError("budgets must be ascending")


@dataclass(frozen=True)
class BladeLikeConfig:
    """End-to-end pipeline on the 85-in / 202-out synthetic problem:
    adaptive DOE over two fidelities, per-output surrogates with reduced
    profiles, surrogate-generated training pairs, flow training, and an
    inverse-consistency validation over held-out targets."""

    seed: int = 0
    out_dir: str = "artifacts/blade_like"
    problem_seed: int = 11
    cost_ratio: float = 5.0
    n_low_init: int = 240
    n_high_init: int = 80
    adaptive_rounds: int = 20
    holdout_frac: float = 0.10
    pca_threshold: float = 0.90
    pca_max_k: int = 8
    doe_mcmc_steps: int = 600
    doe_mcmc_burn: int = 200
    doe_mcmc_keep: int = 5
    mcmc_steps: int = 1500
    mcmc_burn: int = 500
    mcmc_keep: int = 12
    n_pairs: int = 10000
    L: int = 8
    D_c: int = 128
    st_hidden: tuple[int, ...] = (256, 512, 256)
    cond_hidden: tuple[int, ...] = (400, 512, 640, 896)
    batch_size: int = 128
    n_epochs: int = 30
    lr_start: float = 3e-4
    lr_end: float = 3e-6
    weight_decay: float = 5e-7
    dropout_rate: float = 0.0
    n_targets: int = 100
    samples_per_target: int = 100
    r2_threshold: float = 0.9
    n_profile_examples: int = 3


@dataclass(frozen=True)
class DoeConfig:
    """Generate (or extend) a tagged two-fidelity dataset CSV."""

    problem: str = "mf-pair"          # "mf-pair" or "blade-like"
    problem_seed: int = 11
    seed: int = 0
    n_low: int = 20
    n_high: int = 5
    cost_ratio: float = 5.0
    out: str = "artifacts/doe.csv"
    extend: bool = False

    def __post_init__(self):
        if self.problem not in ("mf-pair", "blade-like"):
            raise ConfigurationError(f"unknown problem {self.problem!r}")


@dataclass(frozen=True)
class TrainForwardConfig:
    """Fit per-output surrogates on a dataset CSV and write a model bundle.
    Datasets holding both fidelities get the two-stage treatment; single
    fidelity falls back to a plain GP. ``profile_channels`` marks trailing
    output columns as concatenated profiles to reduce before regression."""

    dataset: str = "artifacts/doe.csv"
    out: str = "artifacts/forward.json"
    seed: int = 0
    mcmc_steps: int = 1500
    mcmc_burn: int = 500
    mcmc_keep: int = 20
    profile_channels: tuple[int, ...] = ()
    pca_threshold: float = 0.90
    pca_max_k: int | None = 8
    holdout_frac: float = 0.0


@dataclass(frozen=True)
class TrainInverseConfig:
    """Train a flow on pairs drawn from a forward model bundle."""

    forward_model: str = "artifacts/forward.json"
    out: str = "artifacts/inverse.json"
    seed: int = 0
    n_pairs: int = 4000
    box_lo: tuple[float, ...] = (0.0,)    # broadcast over input dims
    box_hi: tuple[float, ...] = (1.0,)
    L: int = 4
    D_c: int = 16
    st_hidden: tuple[int, ...] = (128, 128)
    cond_hidden: tuple[int, ...] = (64,)
    batch_size: int = 128
    n_epochs: int = 40
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    weight_decay: float = 0.0
    dropout_rate: float = 0.0


@dataclass(frozen=True)
class InvertConfig:
    """Sample inverse solutions from a trained flow, optionally pushing
    them back through a forward bundle."""

    model: str = "artifacts/inverse.json"
    forward_model: str | None = None
    out: str = "artifacts/candidates.csv"


@dataclass(frozen=True)
class ValidateConfig:
    """Round-trip check: targets from the forward bundle at held-out
    inputs, inverse samples per target, forward-evaluated consistency."""

    model: str = "artifacts/inverse.json"
    forward_model: str = "artifacts/forward.json"
    out: str = "artifacts/validation.json"
    seed: int = 0
    n_targets: int = 50
    samples_per_target: int = 100
    r2_threshold: float = 0.9
    box_lo: tuple[float, ...] = (0.0,)
    box_hi: tuple[float, ...] = (1.0,)
