"""Shared fixtures: small closed-form systems used across the suite."""

import sys

import numpy as np
import pytest

from ltvobs.system import LtvSystem


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Replay the acceptance verdict lines after the capture-hidden run."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICT_LINES", None) if mod else None
    if lines:
        terminalreporter.section("acceptance verdicts")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def toy2():
    """Two states, one unstable mode, scalar output on the unstable mode.

    The unknown input drives only the stable state, so the pair is
    directionally detectable with k=1 and strongly observable at depth 2.
    """
    return LtvSystem(
        a=[[0.3, 1.0], [0.0, -2.0]],
        f=[[0.0], [1.0]],
        d=[[0.0], [1.0]],
        c=[[1.0, 0.0]],
        w_bound=1.0,
    )


def double_integrator(d_col):
    """Chain of two integrators with position output and input column d_col."""
    return LtvSystem(
        a=[[0.0, 1.0], [0.0, 0.0]],
        f=[[0.0], [1.0]],
        d=[[d_col[0]], [d_col[1]]],
        c=[[1.0, 0.0]],
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20260825)
