"""Experiment harness: configs, metrics, deterministic artifact writers,
the composite forward surrogate, experiment runners, and the CLI."""

from . import artifacts, configs, experiments, metrics, pipeline  # noqa: F401
from .pipeline import ForwardSurrogate, ValidationReport  # noqa: F401
