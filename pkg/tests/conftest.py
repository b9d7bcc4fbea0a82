"""Shared fixtures: the three full experiment runs, each executed once per
session and reused by module tests and the acceptance gate, plus the
acceptance-criteria summary printed at the end of the run."""

import time

import pytest

from inverseflow.harness.configs import BladeLikeConfig, MfStudyConfig, ToyConfig
from inverseflow.harness.experiments import run_blade_like, run_mf_study, run_toy

# (number, label, passed, detail), filled by test_acceptance.py
CRITERIA: list[tuple[int, str, bool, str]] = []


def record_criterion(number: int, label: str, passed: bool, detail: str) -> None:
    CRITERIA.append((number, label, passed, detail))
    print(f"[{'PASS' if passed else 'FAIL'}] criterion {number} ({label}): {detail}")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, label, passed, detail in sorted(CRITERIA):
        terminalreporter.write_line(
            f"[{'PASS' if passed else 'FAIL'}] criterion {number} ({label}): {detail}")


@pytest.fixture(scope="session")
def toy_result(tmp_path_factory):
    """Full-scale toy study: 2e4 training steps, 1000 samples per target."""
    out = tmp_path_factory.mktemp("toy")
    t0 = time.time()
    result = run_toy(ToyConfig(out_dir=str(out)))
    result["elapsed"] = time.time() - t0
    return result


@pytest.fixture(scope="session")
def mf_result(tmp_path_factory):
    """Default two-fidelity cost study: 5 seeds, budgets 3 through 6."""
    out = tmp_path_factory.mktemp("mf")
    t0 = time.time()
    result = run_mf_study(MfStudyConfig(out_dir=str(out)))
    result["elapsed"] = time.time() - t0
    return result


@pytest.fixture(scope="session")
def blade_result(tmp_path_factory):
    """Default end-to-end pipeline on the 85-parameter problem."""
    out = tmp_path_factory.mktemp("blade")
    t0 = time.time()
    result = run_blade_like(BladeLikeConfig(out_dir=str(out)))
    result["elapsed"] = time.time() - t0
    return result
