import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from slowfast.ergodic import AveragedDrift
from slowfast.model import CoefficientModel, Dims, make_jump_ou_benchmark
from slowfast.randomness import RandomPlan

settings.register_profile(
    "slowfast", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "slowfast"))

# (criterion, passed, detail) lines reported at the end of the session
ACCEPTANCE_LINES = []


@pytest.fixture
def bench():
    return make_jump_ou_benchmark()


@pytest.fixture
def abar(bench):
    return AveragedDrift.analytic(bench)


@pytest.fixture
def plan():
    return RandomPlan(20240101)


@pytest.fixture
def report():
    """Record one acceptance line; the assertion stays in the test."""

    def add(criterion, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def ones(x, *tail):
    return np.ones((x.shape[0],) + tail)


def scalar_model(a=None, b=0.0, c=0.0, f=None, g=0.0, h=0.0, lambda1=0.0, lambda2=0.0, abar=None,
                 abar_dx=None):
    """One-dimensional custom model; coefficients default to zero.

    ``a`` and ``f`` take batch arrays ``(N, 1)``; the rest are constants.
    """
    zero = lambda x, y: np.zeros_like(x)  # noqa: E731
    return CoefficientModel(
        dims=Dims(1, 1, 1, 1),
        a=a or zero,
        b=lambda x: b * ones(x, 1, 1),
        c=lambda x: c * ones(x, 1),
        f=f or (lambda x, y: np.zeros_like(y)),
        g=lambda x, y: g * ones(x, 1, 1),
        h=lambda x, y: h * ones(x, 1),
        lambda1=lambda1,
        lambda2=lambda2,
        abar_analytic=abar,
        abar_dx=abar_dx,
    )
