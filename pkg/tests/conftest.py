"""Shared pytest fixtures.

The run-history engine and CONFIG bind to ``HISTORY_DB_PATH`` at import time, so
we point them at an isolated temporary database *before* importing any module.
"""
import os
import tempfile

# Must run before `config`/`database` are imported anywhere in the test session.
_TMP_DB = os.path.join(tempfile.gettempdir(), "peak_control_test_history.db")
os.environ["HISTORY_DB_PATH"] = _TMP_DB
os.environ["WORKERS"] = "1"

import numpy as np
import pytest

import database
from problem_core import CombinedProblem
from smoothing import SmoothingSpec


@pytest.fixture(autouse=True)
def fresh_db():
    """Give every test a clean schema on the isolated SQLite database."""
    database.Session.remove()
    database.Base.metadata.drop_all(database.engine)
    database.Base.metadata.create_all(database.engine)
    yield
    database.Session.remove()


def make_lqr_problem(x0=1.0, bound=2.0):
    """dx/dt = u, reward -(x^2 + u^2), T = 1, no peak penalty.

    Optimal feedback is u = -tanh(1 - t) x, giving x(t) = cosh(1 - t) / cosh(1).
    """
    return CombinedProblem(
        dynamics=lambda t, x, u: np.array([u[0]]),
        running_reward=lambda t, x, u: -(x[0] * x[0] + u[0] * u[0]),
        peak=lambda t, x: x[0],
        peak_dx=lambda t, x: np.ones(1),
        terminal_reward=lambda x: 0.0,
        sigma=0.0,
        control_lower=lambda t: np.array([-bound]),
        control_upper=lambda t: np.array([bound]),
        smoothing=SmoothingSpec(kind="linear", delta=0.01),
        x0=np.array([x0]),
    )


def lqr_callbacks():
    def costate_rhs(t, x, y, lam_x, lam_y, u):
        return 2.0 * x, 0.0

    def costate_terminal(x_T, y_T):
        return np.zeros_like(x_T), 0.0

    def control_update(t, x, y, lam_x, lam_y):
        return 0.5 * lam_x

    return costate_rhs, costate_terminal, control_update


@pytest.fixture
def lqr_problem():
    return make_lqr_problem()


@pytest.fixture
def lqr():
    return lqr_callbacks()
