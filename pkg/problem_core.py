"""Combined running-reward / peak-penalty problems and their exact evaluation.

The peak term sigma * sup_t Linf(t, x(t)) is carried by an auxiliary state y
that follows the running maximum of Linf:

    dy/dt = (dLinf/dt)^+ * psi(Linf(t, x) - y)

so the peak penalty becomes the terminal term -sigma * y(T).
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from grid_ode import TimeGrid, Trajectory, integrate_forward, trapezoid_weights
from smoothing import SmoothingSpec, psi

logger = logging.getLogger(__name__)


def _zero_time_partial(t, x):
    return 0.0


@dataclass(frozen=True)
class GridModel:
    """A problem bound to one grid, with its time-dependent pieces sampled once.

    rhs / rhs_indicator are staged packed (x, y) right-hand sides: they take
    the index into ``grid.stage_times``. running_reward and peak act on whole
    node arrays, x of shape (n_nodes, n) and u of shape (n_nodes, m).
    """

    grid: TimeGrid
    lower: np.ndarray
    upper: np.ndarray
    rhs: Callable
    rhs_indicator: Callable
    running_reward: Callable
    peak: Callable

    def __post_init__(self):
        if np.any(self.lower > self.upper):
            k = int(np.argmax(np.any(self.lower > self.upper, axis=1)))
            raise ValueError(f"Control box is empty at t={self.grid.node(k):.6g}")

    def state_rhs(self, dynamics: Literal["smooth", "indicator"] = "smooth"):
        return self.rhs if dynamics == "smooth" else self.rhs_indicator


@dataclass(frozen=True)
class CombinedProblem:
    """Maximize  int L(t,x,u) dt - sigma * sup_t Linf(t,x) + Psi(x(T)).

    ``on_grid`` optionally builds a GridModel with the time-dependent
    coefficients sampled in one pass; without it the pointwise callbacks are
    wrapped node by node.
    """

    dynamics: Callable
    running_reward: Callable
    peak: Callable
    peak_dx: Callable
    terminal_reward: Callable
    sigma: float
    control_lower: Callable
    control_upper: Callable
    smoothing: SmoothingSpec
    x0: np.ndarray
    y0: Optional[float] = None
    t0: float = 0.0
    peak_dt: Callable = field(default=_zero_time_partial)
    on_grid: Optional[Callable[[TimeGrid], GridModel]] = None

    def __post_init__(self):
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        x0.flags.writeable = False
        object.__setattr__(self, "x0", x0)
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        start_peak = float(self.peak(self.t0, x0))
        if self.y0 is None:
            object.__setattr__(self, "y0", start_peak)
        elif self.y0 < start_peak:
            raise ValueError(
                f"y0={self.y0} lies below the initial peak level Linf(t0, x0)={start_peak}"
            )

    @property
    def state_dim(self):
        return self.x0.size

    @property
    def control_dim(self):
        return np.atleast_1d(self.control_lower(self.t0)).size

    def initial_state(self):
        return np.append(self.x0, self.y0)

    def bind(self, grid) -> GridModel:
        if self.on_grid is not None:
            return self.on_grid(grid)
        return pointwise_grid_model(self, grid)

    def control_bounds_on(self, grid):
        """Lower and upper control bounds at every node, shape (n_nodes, m) each."""
        model = self.bind(grid)
        return model.lower, model.upper


class ObjectiveBreakdown(BaseModel):
    model_config = ConfigDict(frozen=True)

    integral_term: float
    peak_smoothed: float
    peak_exact: float
    terminal_term: float
    sigma: float
    total_smoothed: float
    total_exact: float

    @classmethod
    def from_parts(cls, integral_term, peak_smoothed, peak_exact, terminal_term, sigma):
        return cls(
            integral_term=integral_term,
            peak_smoothed=peak_smoothed,
            peak_exact=peak_exact,
            terminal_term=terminal_term,
            sigma=sigma,
            total_smoothed=integral_term - sigma * peak_smoothed + terminal_term,
            total_exact=integral_term - sigma * peak_exact + terminal_term,
        )

    @property
    def revenue(self):
        """Objective without the peak penalty."""
        return self.integral_term + self.terminal_term


def _peak_rate(problem, t, x, dx):
    return float(np.dot(problem.peak_dx(t, x), dx)) + problem.peak_dt(t, x)


def augmented_rhs(problem: CombinedProblem, t, x, y, u):
    dx = np.atleast_1d(problem.dynamics(t, x, u))
    ldot = _peak_rate(problem, t, x, dx)
    dy = max(ldot, 0.0) * psi(problem.smoothing, problem.peak(t, x) - y)
    return dx, dy


def augmented_rhs_indicator(problem: CombinedProblem, t, x, y, u):
    dx = np.atleast_1d(problem.dynamics(t, x, u))
    ldot = _peak_rate(problem, t, x, dx)
    dy = ldot if (problem.peak(t, x) >= y and ldot >= 0.0) else 0.0
    return dx, dy


def state_rhs(problem: CombinedProblem, dynamics: Literal["smooth", "indicator"] = "smooth"):
    """Packed (x, y) right-hand side in time, built from the pointwise callbacks."""
    step = augmented_rhs if dynamics == "smooth" else augmented_rhs_indicator
    n = problem.state_dim

    def rhs(t, s, u):
        dx, dy = step(problem, t, s[:n], s[n], u)
        return np.append(dx, dy)

    return rhs


def _staged(rhs, times):
    return lambda j, s, u: rhs(times[j], s, u)


def pointwise_grid_model(problem: CombinedProblem, grid) -> GridModel:
    """GridModel that calls the pointwise callbacks at every node and stage."""
    times = grid.nodes
    stage_times = grid.stage_times.tolist()

    def running_reward(x, u):
        return np.array([problem.running_reward(t, x[k], u[k]) for k, t in enumerate(times)])

    def peak(x):
        return np.array([float(problem.peak(t, x[k])) for k, t in enumerate(times)])

    return GridModel(
        grid=grid,
        lower=np.array([np.atleast_1d(problem.control_lower(t)) for t in times], dtype=float),
        upper=np.array([np.atleast_1d(problem.control_upper(t)) for t in times], dtype=float),
        rhs=_staged(state_rhs(problem, "smooth"), stage_times),
        rhs_indicator=_staged(state_rhs(problem, "indicator"), stage_times),
        running_reward=running_reward,
        peak=peak,
    )


def clamp_control(problem, grid, control, warn=True, model=None):
    model = model or problem.bind(grid)
    values = control.values
    clipped = np.clip(values, model.lower, model.upper)
    if np.array_equal(clipped, values):
        return control
    if warn:
        worst = float(np.max(np.abs(clipped - values)))
        logger.warning(f"Control left its bounds by up to {worst:.3g}; clamping")
    return Trajectory(grid, clipped)


def running_integral(model, states, control):
    """Trapezoid integral of the running reward over the model's grid."""
    n = states.dim - 1
    rewards = model.running_reward(states.values[:, :n], control.values)
    return float(np.dot(trapezoid_weights(model.grid), rewards))


def peak_exact(model, states):
    n = states.dim - 1
    return float(np.max(model.peak(states.values[:, :n])))


def breakdown_for(problem, grid, states, control, model=None):
    model = model or problem.bind(grid)
    n = problem.state_dim
    final = states.values[-1]
    return ObjectiveBreakdown.from_parts(
        integral_term=running_integral(model, states, control),
        peak_smoothed=float(final[n]),
        peak_exact=peak_exact(model, states),
        terminal_term=float(problem.terminal_reward(final[:n])),
        sigma=problem.sigma,
    )


def evaluate(
    problem,
    grid,
    control,
    dynamics: Literal["smooth", "indicator"] = "smooth",
    model: Optional[GridModel] = None,
):
    """Integrate the augmented dynamics under ``control`` and price the result.

    Returns the (x, y) trajectory and the ObjectiveBreakdown; controls outside
    the box are clamped with a warning first. Pass ``model`` to reuse one
    bound to ``grid`` across calls.
    """
    model = model or problem.bind(grid)
    control = clamp_control(problem, grid, control, model=model)
    states = integrate_forward(
        model.state_rhs(dynamics), problem.initial_state(), grid, control, staged=True
    )
    return states, breakdown_for(problem, grid, states, control, model)
