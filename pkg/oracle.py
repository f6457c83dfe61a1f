"""Exhaustive search over piecewise-constant controls on coarse instances.

Controls take one of ``n_levels`` equispaced values per segment; candidates
sharing a prefix of segments share the integration of that prefix. States
are stepped with the same staged right-hand side as problem_core.evaluate and
priced by the same breakdown, so an enumerated candidate scores exactly what
evaluate would give it.
"""
import bisect
import itertools
import logging
from dataclasses import dataclass, field
from typing import List, Literal

import numpy as np

from config import CONFIG
from grid_ode import NonFiniteStateError, TimeGrid, Trajectory, rk4_step
from problem_core import ObjectiveBreakdown, breakdown_for

logger = logging.getLogger(__name__)

TOP_K = 5


class EnumerationTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class OracleConfig:
    eval_grid: TimeGrid
    n_segments: int = 4
    n_levels: int = 9
    criterion: Literal["total_smoothed", "total_exact"] = "total_smoothed"
    max_candidates: int = field(default_factory=lambda: CONFIG.ORACLE_MAX_CANDIDATES)

    def __post_init__(self):
        if self.n_levels < 2:
            raise ValueError(f"n_levels must be >= 2, got {self.n_levels}")
        if self.n_segments < 1:
            raise ValueError(f"n_segments must be >= 1, got {self.n_segments}")


@dataclass
class OracleResult:
    control: Trajectory
    breakdown: ObjectiveBreakdown
    levels: tuple
    top: List[dict]
    candidates_evaluated: int


def segment_of_nodes(grid, n_segments):
    """Segment index of every node; segments split [t0, T] into equal parts."""
    k = np.arange(grid.n_nodes)
    return np.minimum(k * n_segments // grid.n_steps, n_segments - 1)


def segment_levels(problem, grid, n_segments, n_levels):
    """Candidate values per segment, spread over the box at the segment midpoint."""
    span = (grid.T - grid.t0) / n_segments
    per_segment = []
    for s in range(n_segments):
        t_mid = grid.t0 + (s + 0.5) * span
        lo = np.atleast_1d(problem.control_lower(t_mid)).astype(float)
        hi = np.atleast_1d(problem.control_upper(t_mid)).astype(float)
        axes = [np.linspace(a, b, n_levels) for a, b in zip(lo, hi)]
        per_segment.append([np.array(combo) for combo in itertools.product(*axes)])
    return per_segment


def piecewise_control(problem, grid, n_segments, chosen):
    """Trajectory holding chosen[s] on segment s, clamped to the node bounds."""
    lower, upper = problem.control_bounds_on(grid)
    seg = segment_of_nodes(grid, n_segments)
    values = np.array([chosen[s] for s in seg], dtype=float)
    return Trajectory(grid, np.clip(values, lower, upper))


def project_to_segments(problem, control, eval_grid, n_segments):
    """Segment-average a control, then hold the averages on eval_grid."""
    seg = segment_of_nodes(control.grid, n_segments)
    means = [control.values[seg == s].mean(axis=0) for s in range(n_segments)]
    return piecewise_control(problem, eval_grid, n_segments, means)


def brute_force(problem, config: OracleConfig) -> OracleResult:
    grid = config.eval_grid
    m = problem.control_dim
    size = config.n_levels ** (m * config.n_segments)
    if size > config.max_candidates:
        raise EnumerationTooLargeError(
            f"{config.n_levels}^{m * config.n_segments} = {size} candidates exceeds "
            f"the limit of {config.max_candidates}"
        )
    logger.info(f"Oracle: enumerating {size} piecewise-constant controls on {grid.n_steps} steps")

    model = problem.bind(grid)
    levels = segment_levels(problem, grid, config.n_segments, config.n_levels)
    seg = segment_of_nodes(grid, config.n_segments)
    nodes_of_segment = [np.flatnonzero(seg == s) for s in range(config.n_segments)]
    rhs = model.rhs
    dt = grid.dt

    # rows of a segment are overwritten by each sibling; earlier rows hold the shared prefix
    states = np.empty((grid.n_nodes, problem.state_dim + 1))
    states[0] = problem.initial_state()
    controls = np.empty((grid.n_nodes, m))

    top = []  # sorted by (-objective, level indices)
    best = None
    evaluated = 0

    def run_segment(s, level):
        for k in nodes_of_segment[s]:
            u = np.clip(level, model.lower[k], model.upper[k])
            controls[k] = u
            if k < grid.n_steps:
                j = 2 * k
                with np.errstate(over="ignore", invalid="ignore"):
                    states[k + 1] = rk4_step(rhs, (j, j + 1, j + 2), states[k], u, dt)
                if not np.all(np.isfinite(states[k + 1])):
                    raise NonFiniteStateError(k + 1, grid.node(k + 1))

    def visit(s, picked):
        nonlocal best, evaluated
        if s == config.n_segments:
            evaluated += 1
            bd = breakdown_for(problem, grid, Trajectory(grid, states), Trajectory(grid, controls), model)
            score = getattr(bd, config.criterion)
            key = (-score, tuple(picked))
            if len(top) < TOP_K or key < top[-1][0]:
                bisect.insort(top, (key, bd))
                del top[TOP_K:]
            if best is None or score > best[0]:
                best = (score, tuple(picked), bd)
            return
        for i, level in enumerate(levels[s]):
            run_segment(s, level)
            visit(s + 1, picked + [i])

    visit(0, [])

    score, picked, bd = best
    chosen = [levels[s][i] for s, i in enumerate(picked)]
    control = piecewise_control(problem, grid, config.n_segments, chosen)
    ranked = [
        {
            "rank": r + 1,
            "objective": -key[0],
            "levels": [levels[s][i].tolist() for s, i in enumerate(key[1])],
            "total_smoothed": b.total_smoothed,
            "total_exact": b.total_exact,
            "peak_smoothed": b.peak_smoothed,
            "peak_exact": b.peak_exact,
        }
        for r, (key, b) in enumerate(top)
    ]
    logger.info(f"Oracle: best {config.criterion}={score:.8g} after {evaluated} candidates")
    return OracleResult(
        control=control, breakdown=bd, levels=picked, top=ranked, candidates_evaluated=evaluated
    )
