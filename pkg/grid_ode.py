"""Uniform time grids, sampled trajectories and fixed-step RK4 integration.

Controls are sample-and-hold: the value at the left node of a step is used for
all four RK4 stages. Backward integration reconstructs frozen forward data at
the half steps by linear interpolation between nodes.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)


class HorizonEmptyError(ValueError):
    pass


class ZeroStepsError(ValueError):
    pass


class NonFiniteStateError(ArithmeticError):
    """A state or costate component became NaN/Inf during integration."""

    def __init__(self, node, time, iteration=None):
        self.node = node
        self.time = time
        self.iteration = iteration
        where = f"node {node} (t={time:.6g})"
        if iteration is not None:
            where += f" during sweep {iteration}"
        super().__init__(f"Non-finite state at {where}")


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    n_steps: int

    @property
    def dt(self):
        return (self.T - self.t0) / self.n_steps

    @property
    def n_nodes(self):
        return self.n_steps + 1

    def node(self, k):
        return self.t0 + k * self.dt

    @property
    def nodes(self):
        return self.t0 + np.arange(self.n_nodes) * self.dt

    @property
    def stage_times(self):
        """Nodes and half steps interleaved; node k sits at index 2k."""
        return self.t0 + np.arange(2 * self.n_steps + 1) * (0.5 * self.dt)


def make_grid(t0, T, n_steps):
    """Uniform grid on [t0, T] with n_steps intervals."""
    if n_steps == 0:
        raise ZeroStepsError("n_steps must be >= 1, got 0")
    if n_steps < 0 or int(n_steps) != n_steps:
        raise ZeroStepsError(f"n_steps must be a positive integer, got {n_steps}")
    if not T > t0:
        raise HorizonEmptyError(f"Horizon is empty: T={T} must exceed t0={t0}")
    return TimeGrid(float(t0), float(T), int(n_steps))


@dataclass(frozen=True)
class Trajectory:
    """Per-node samples of a vector signal on a grid; values has shape (n_nodes, dim)."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2 or values.shape[0] != self.grid.n_nodes:
            raise ValueError(
                f"Trajectory needs {self.grid.n_nodes} nodes, got array of shape {values.shape}"
            )
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def dim(self):
        return self.values.shape[1]

    def at(self, k):
        return self.values[k]

    def column(self, i):
        return self.values[:, i]

    @classmethod
    def constant(cls, grid, value):
        row = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(grid, np.tile(row, (grid.n_nodes, 1)))


def rk4_step(rhs: Callable, stages, s, c, h):
    """One classical RK4 step of size h with the control c held over the step.

    ``stages`` holds what rhs receives at the left end, the midpoint and the
    right end of the step: times, or stage indices for staged right-hand sides.
    """
    left, mid, right = stages
    k1 = rhs(left, s, c)
    k2 = rhs(mid, s + (0.5 * h) * k1, c)
    k3 = rhs(mid, s + (0.5 * h) * k2, c)
    k4 = rhs(right, s + h * k3, c)
    return s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _stage_clock(grid, staged):
    if staged:
        return range(2 * grid.n_steps + 1)
    return grid.stage_times.tolist()


def _raise_on_non_finite(out, grid):
    bad = ~np.isfinite(out).all(axis=1)
    if bad.any():
        k = int(np.argmax(bad))
        raise NonFiniteStateError(k, grid.node(k))


def integrate_forward(rhs, s0, grid, control, staged=False):
    """Integrate ds/dt = rhs(t, s, u(t)) from s0 at t0 across the grid.

    With ``staged`` the rhs receives the index into ``grid.stage_times``
    instead of the time, so coefficients can be sampled once up front.
    """
    if control.grid.n_steps != grid.n_steps:
        raise ValueError("control must be sampled on the integration grid")
    dt = grid.dt
    clock = _stage_clock(grid, staged)
    s = np.atleast_1d(np.asarray(s0, dtype=float))
    out = np.empty((grid.n_nodes, s.size))
    out[0] = s
    controls = control.values
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(grid.n_steps):
            j = 2 * k
            s = rk4_step(rhs, (clock[j], clock[j + 1], clock[j + 2]), s, controls[k], dt)
            out[k + 1] = s
    _raise_on_non_finite(out, grid)
    return Trajectory(grid, out)


def integrate_backward(rhs, sT, grid, forward_data, staged=False):
    """Integrate ds/dt = rhs(t, s, data(t)) backward from sT at T.

    forward_data is frozen; its value at half steps is the midpoint of the two
    neighbouring nodes. ``staged`` works as in integrate_forward.
    """
    if forward_data.grid.n_steps != grid.n_steps:
        raise ValueError("forward data must be sampled on the integration grid")
    dt = grid.dt
    clock = _stage_clock(grid, staged)
    s = np.atleast_1d(np.asarray(sT, dtype=float))
    out = np.empty((grid.n_nodes, s.size))
    out[-1] = s
    data = forward_data.values
    mids = 0.5 * (data[:-1] + data[1:])
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(grid.n_steps, 0, -1):
            j = 2 * k
            d_mid = mids[k - 1]
            k1 = rhs(clock[j], s, data[k])
            k2 = rhs(clock[j - 1], s - (0.5 * dt) * k1, d_mid)
            k3 = rhs(clock[j - 1], s - (0.5 * dt) * k2, d_mid)
            k4 = rhs(clock[j - 2], s - dt * k3, data[k - 1])
            s = s - (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            out[k - 1] = s
    _raise_on_non_finite(out, grid)
    return Trajectory(grid, out)


def trapezoid_weights(grid):
    """Composite trapezoid weights on the grid nodes."""
    w = np.full(grid.n_nodes, grid.dt)
    w[0] = w[-1] = 0.5 * grid.dt
    return w


def convergence_ratio(error_coarse, error_fine):
    """Ratio of errors between an N and a 2N grid; about 16 for a 4th-order scheme."""
    if error_fine == 0:
        return math.inf
    return error_coarse / error_fine
