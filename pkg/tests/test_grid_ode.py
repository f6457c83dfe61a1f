import math

import numpy as np
import pytest

from grid_ode import (
    HorizonEmptyError,
    NonFiniteStateError,
    Trajectory,
    ZeroStepsError,
    convergence_ratio,
    integrate_backward,
    integrate_forward,
    make_grid,
    trapezoid_weights,
)


def _unused(grid):
    return Trajectory.constant(grid, 0.0)


# --- grids ---

@pytest.mark.parametrize("t0, T, n, expected", [
    (0.0, 1.0, 4, [0.0, 0.25, 0.5, 0.75, 1.0]),
    (0.0, 1.0, 1, [0.0, 1.0]),
    (0.5, 1.5, 2, [0.5, 1.0, 1.5]),
])
def test_grid_nodes(t0, T, n, expected):
    grid = make_grid(t0, T, n)
    assert grid.n_nodes == len(expected)
    assert grid.nodes == pytest.approx(expected, abs=1e-15)
    assert grid.node(n) == pytest.approx(T, abs=1e-15)


def test_zero_steps_is_rejected():
    with pytest.raises(ZeroStepsError):
        make_grid(0.0, 1.0, 0)


@pytest.mark.parametrize("T", [0.0, -1.0])
def test_empty_horizon_is_rejected(T):
    with pytest.raises(HorizonEmptyError):
        make_grid(0.0, T, 10)


def test_trajectory_is_read_only_and_shape_checked():
    grid = make_grid(0.0, 1.0, 4)
    traj = Trajectory(grid, np.arange(5.0))
    assert traj.values.shape == (5, 1)
    with pytest.raises(ValueError):
        traj.values[0, 0] = 1.0
    with pytest.raises(ValueError):
        Trajectory(grid, np.zeros(4))


def test_stage_times_interleave_nodes_and_midpoints():
    grid = make_grid(0.0, 1.0, 4)
    stages = grid.stage_times
    assert stages.size == 9
    assert stages[::2] == pytest.approx(grid.nodes, abs=1e-15)
    assert stages[1::2] == pytest.approx(grid.nodes[:-1] + 0.125, abs=1e-15)


def test_trapezoid_weights_sum_to_horizon():
    grid = make_grid(0.0, 2.0, 8)
    w = trapezoid_weights(grid)
    assert w.sum() == pytest.approx(2.0)
    assert w[0] == w[-1] == pytest.approx(0.125)


# --- forward integration ---

def test_exponential_decay():
    grid = make_grid(0.0, 1.0, 100)
    out = integrate_forward(lambda t, s, c: -s, 1.0, grid, _unused(grid))
    assert out.values[-1, 0] == pytest.approx(math.exp(-1.0), abs=1e-6)


def test_constant_control_is_integrated_exactly():
    grid = make_grid(0.0, 1.0, 100)
    out = integrate_forward(lambda t, s, c: c, 0.0, grid, Trajectory.constant(grid, 2.0))
    assert out.values[-1, 0] == pytest.approx(2.0, abs=1e-12)


def test_time_polynomial_is_integrated_exactly():
    grid = make_grid(0.0, 1.0, 100)
    out = integrate_forward(lambda t, s, c: np.array([t]), 0.0, grid, _unused(grid))
    assert out.values[-1, 0] == pytest.approx(0.5, abs=1e-12)


def test_control_is_held_at_left_node():
    grid = make_grid(0.0, 1.0, 2)
    control = Trajectory(grid, [1.0, 3.0, 100.0])
    out = integrate_forward(lambda t, s, c: c, 0.0, grid, control)
    # last node's value never drives a step
    assert out.values[:, 0] == pytest.approx([0.0, 0.5, 2.0])


def test_rk4_order_ratio():
    def rhs(t, s, c):
        return math.cos(t) * s

    exact = math.exp(math.sin(1.0))
    errors = []
    for n in (20, 40):
        grid = make_grid(0.0, 1.0, n)
        out = integrate_forward(rhs, 1.0, grid, _unused(grid))
        errors.append(abs(out.values[-1, 0] - exact))
    assert 12.0 <= convergence_ratio(*errors) <= 20.0


def test_non_finite_state_is_reported_with_its_node():
    grid = make_grid(0.0, 1.0, 10)

    def rhs(t, s, c):
        return np.array([np.nan]) if t >= 0.5 else np.zeros(1)

    with pytest.raises(NonFiniteStateError) as err:
        integrate_forward(rhs, 0.0, grid, _unused(grid))
    assert 1 <= err.value.node <= 10
    assert err.value.time >= 0.45


def test_forward_integration_is_deterministic():
    grid = make_grid(0.0, 1.0, 50)
    rhs = lambda t, s, c: np.array([math.sin(3 * t) - s[0] * s[0]])
    a = integrate_forward(rhs, 0.2, grid, _unused(grid))
    b = integrate_forward(rhs, 0.2, grid, _unused(grid))
    assert np.array_equal(a.values, b.values)


# --- backward integration ---

def test_zero_dynamics_backward_is_constant():
    grid = make_grid(0.0, 1.0, 10)
    out = integrate_backward(lambda t, s, d: np.zeros_like(s), -5.0, grid, _unused(grid))
    assert np.all(out.values == -5.0)


def test_backward_exponential():
    grid = make_grid(0.0, 1.0, 100)
    out = integrate_backward(lambda t, s, d: -s, 1.0, grid, _unused(grid))
    assert out.values[-1, 0] == 1.0
    assert out.values[0, 0] == pytest.approx(math.e, abs=1e-6)


def test_backward_uses_frozen_data_between_nodes():
    grid = make_grid(0.0, 1.0, 4)
    data = Trajectory(grid, grid.nodes)  # d(t) = t, linear so midpoints are exact
    out = integrate_backward(lambda t, s, d: d, 0.0, grid, data)
    # s(t) = (t^2 - 1) / 2
    assert out.values[:, 0] == pytest.approx((grid.nodes ** 2 - 1.0) / 2.0, abs=1e-14)


def test_forward_then_backward_recovers_start():
    grid = make_grid(0.0, 1.0, 200)
    rhs = lambda t, s, c: np.array([-s[0] + math.sin(t)])
    fwd = integrate_forward(rhs, 1.0, grid, _unused(grid))
    back = integrate_backward(rhs, fwd.values[-1], grid, _unused(grid))
    assert back.values[0, 0] == pytest.approx(1.0, abs=1e-8)


# --- staged right-hand sides ---

def test_staged_forward_matches_timed_forward():
    grid = make_grid(0.0, 1.0, 30)
    rate = np.cos(grid.stage_times).tolist()
    timed = integrate_forward(lambda t, s, c: math.cos(t) * s - c, 1.0, grid, Trajectory.constant(grid, 0.3))
    staged = integrate_forward(
        lambda j, s, c: rate[j] * s - c, 1.0, grid, Trajectory.constant(grid, 0.3), staged=True
    )
    assert staged.values[:, 0] == pytest.approx(timed.values[:, 0], rel=1e-13)


def test_staged_backward_visits_stages_in_reverse():
    grid = make_grid(0.0, 1.0, 3)
    seen = []

    def rhs(j, s, d):
        seen.append(j)
        return np.zeros_like(s)

    integrate_backward(rhs, 0.0, grid, _unused(grid), staged=True)
    assert seen[:4] == [6, 5, 5, 4]
    assert seen[-4:] == [2, 1, 1, 0]
