"""Shared fixtures and the acceptance summary printed after the run."""

from __future__ import annotations

import re

import numpy as np
import pytest

from catebench.data import HoldoutFraction, ihdp_assignment, ihdp_like_profile, make_split, synthesize_covariates
from catebench.dgp.ihdp import IhdpConfig, generate_ihdp_draw

# criterion number -> detail line, filled in by tests/test_acceptance.py
ACCEPTANCE_DETAILS: dict[int, str] = {}
_OUTCOMES: dict[int, str] = {}
_CRITERION = re.compile(r"test_c(\d\d)_")


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if m is None or "test_acceptance" not in report.nodeid:
        return
    k = int(m.group(1))
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _OUTCOMES[k] = "PASS" if report.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_OUTCOMES):
        detail = ACCEPTANCE_DETAILS.get(k, "")
        terminalreporter.write_line(f"criterion {k:2d}: {_OUTCOMES[k]}  {detail}".rstrip())


@pytest.fixture(scope="session")
def ihdp_base():
    """Small IHDP-like covariates, treatment and split shared by unit tests."""
    X = synthesize_covariates(300, ihdp_like_profile(), 3)
    W, e = ihdp_assignment(X, 4)
    split = make_split(X.n, HoldoutFraction(0.2), seed=5)
    return X, W, e, split


@pytest.fixture(scope="session")
def ihdp_draw(ihdp_base):
    X, W, e, split = ihdp_base
    return generate_ihdp_draw(X, W, IhdpConfig(), 11, split, e)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
