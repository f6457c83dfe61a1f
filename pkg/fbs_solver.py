"""Forward-backward sweep solver for the combined peak/running problem.

Each sweep integrates (x, y) forward under the current control, integrates the
costates (lambda_x, lambda_y) backward from their terminal values with the
forward data frozen and maximizes the Hamiltonian node by node. The control
then moves toward that candidate: a relaxed step of size ``relaxation``,
accelerated by mixing in the last few accepted sweeps (Anderson mixing).

A sweep whose residual sup|candidate - u| grows by more than RESIDUAL_SLACK
over the last accepted one is rejected: the step is retaken from the accepted
control with the history dropped (accelerated step) or the relaxation halved
(plain step). When no sweep improves on the best residual for STALL_PATIENCE
sweeps the solver returns to the best control with half the relaxation. Each
new best lets the relaxation grow back toward the configured value.
"""
import logging
import time
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Literal, Union

import numpy as np
from scipy.optimize import minimize_scalar

from grid_ode import NonFiniteStateError, TimeGrid, Trajectory, integrate_backward
from problem_core import (
    CombinedProblem,
    ObjectiveBreakdown,
    augmented_rhs,
    clamp_control,
    evaluate,
)

logger = logging.getLogger(__name__)

MIN_RELAXATION = 1e-4
STALL_PATIENCE = 20
RELAXATION_GROWTH = 1.5
RESIDUAL_SLACK = 1.05
GRID_MAXIMIZER_POINTS = 257


@dataclass(frozen=True)
class FbsConfig:
    grid: TimeGrid
    max_iterations: int = 20000
    tolerance: float = 1e-6
    relaxation: float = 0.5
    u_init: Union[Literal["midpoint", "zero"], Trajectory] = "midpoint"
    costate_terminal_mode: Literal["paper_literal", "gradient_consistent"] = "paper_literal"
    anderson_depth: int = 6

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError(f"tolerance must be > 0, got {self.tolerance}")
        if not 0 < self.relaxation <= 1:
            raise ValueError(f"relaxation must lie in (0, 1], got {self.relaxation}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.anderson_depth < 0:
            raise ValueError(f"anderson_depth must be >= 0, got {self.anderson_depth}")

    def echo(self):
        """Plain-dict view of the effective settings for summaries."""
        return {
            "n_steps": self.grid.n_steps,
            "t0": self.grid.t0,
            "T": self.grid.T,
            "max_iterations": self.max_iterations,
            "tolerance": self.tolerance,
            "relaxation": self.relaxation,
            "anderson_depth": self.anderson_depth,
            "u_init": self.u_init if isinstance(self.u_init, str) else "given",
            "costate_terminal_mode": self.costate_terminal_mode,
        }


@dataclass
class FbsSolution:
    control: Trajectory
    states: Trajectory
    costates: Trajectory
    breakdown: ObjectiveBreakdown
    converged: bool
    iterations_used: int
    final_update_norm: float
    relaxation: float
    mode: Literal["smooth", "dn"] = "smooth"
    objective_history: list = field(default_factory=list)
    update_history: list = field(default_factory=list)
    elapsed_seconds: float = 0.0
    rejected_sweeps: int = 0

    @property
    def state_dim(self):
        return self.states.dim - 1

    @property
    def x(self):
        return self.states.values[:, : self.state_dim]

    @property
    def y(self):
        return self.states.column(self.state_dim)

    @property
    def u(self):
        return self.control.values

    def diagnostics(self):
        return {
            "mode": self.mode,
            "converged": self.converged,
            "iterations_used": self.iterations_used,
            "final_update_norm": self.final_update_norm,
            "final_relaxation": self.relaxation,
            "rejected_sweeps": self.rejected_sweeps,
            "elapsed_seconds": round(self.elapsed_seconds, 3),
        }


@dataclass(frozen=True)
class GridCallback:
    """A pointwise solver callback paired with a builder for its grid-bound form.

    Calling it runs ``pointwise``. The solver asks ``on_grid(grid)`` once per
    solve for the fast form:

      costate rhs:    rhs(j, lam, row) -> d_lam, staged like integrate_backward,
                      with row = (x, y, u) and lam = (lam_x, lam_y) packed
      control update: update(x, y, lam_x, lam_y) -> candidates at every node,
                      x and lam_x of shape (n_nodes, n), y and lam_y (n_nodes,)
    """

    pointwise: Callable
    bind: Callable

    def __call__(self, *args):
        return self.pointwise(*args)

    def on_grid(self, grid):
        return self.bind(grid)


def initial_control(problem, config, model=None):
    grid = config.grid
    model = model or problem.bind(grid)
    if isinstance(config.u_init, Trajectory):
        return clamp_control(problem, grid, config.u_init, model=model)
    if config.u_init == "zero":
        values = np.clip(np.zeros_like(model.lower), model.lower, model.upper)
    else:
        values = 0.5 * (model.lower + model.upper)
    return Trajectory(grid, values)


def bind_costate_rhs(problem, grid, costate_rhs):
    """Staged packed costate rhs (j, lam, row) for integrate_backward."""
    if hasattr(costate_rhs, "on_grid"):
        return costate_rhs.on_grid(grid)
    n = problem.state_dim
    times = grid.stage_times.tolist()

    def rhs(j, lam, row):
        d_lam_x, d_lam_y = costate_rhs(times[j], row[:n], row[n], lam[:n], lam[n], row[n + 1:])
        return np.append(np.atleast_1d(d_lam_x), d_lam_y)

    return rhs


def bind_control_update(problem, grid, control_update):
    """Candidate controls at every node from the packed state and costate arrays."""
    n = problem.state_dim
    n_nodes = grid.n_nodes
    if hasattr(control_update, "on_grid"):
        update = control_update.on_grid(grid)

        def at_nodes(sv, cv):
            cand = update(sv[:, :n], sv[:, n], cv[:, :n], cv[:, n])
            return np.asarray(cand, dtype=float).reshape(n_nodes, -1)

        return at_nodes

    times = grid.nodes

    def at_nodes(sv, cv):
        return np.array([
            np.atleast_1d(control_update(times[k], sv[k, :n], sv[k, n], cv[k, :n], cv[k, n]))
            for k in range(n_nodes)
        ], dtype=float)

    return at_nodes


def costate_sweep(problem, grid, states, control, costate_rhs, costate_terminal, staged_rhs=None):
    """Backward costate pass with (x, y, u) frozen at the nodes."""
    n = problem.state_dim
    final = states.values[-1]
    lam_x_T, lam_y_T = costate_terminal(final[:n], final[n])
    terminal = np.append(np.atleast_1d(np.asarray(lam_x_T, dtype=float)), float(lam_y_T))
    data = Trajectory(grid, np.hstack([states.values, control.values]))
    rhs = staged_rhs or bind_costate_rhs(problem, grid, costate_rhs)
    return integrate_backward(rhs, terminal, grid, data, staged=True)


def _anderson_step(u, f, history, omega):
    """Relaxed step from (u, f) corrected by the secant pairs in ``history``."""
    if not history:
        return u + omega * f
    d_u = np.stack([p[0].ravel() for p in history], axis=1)
    d_f = np.stack([p[1].ravel() for p in history], axis=1)
    coeffs, *_ = np.linalg.lstsq(d_f, f.ravel(), rcond=None)
    step = omega * f.ravel() - (d_u + omega * d_f) @ coeffs
    return u + step.reshape(u.shape)


@dataclass
class _Accepted:
    u: np.ndarray
    f: np.ndarray
    rms: float


def _sweep(problem, costate_rhs, costate_terminal, control_update, config, mode):
    grid = config.grid
    dynamics = "smooth" if mode == "smooth" else "indicator"
    model = problem.bind(grid)
    lower, upper = model.lower, model.upper
    staged_costates = bind_costate_rhs(problem, grid, costate_rhs)
    at_nodes = bind_control_update(problem, grid, control_update)
    # indicator sweeps have a discontinuous candidate map; secant mixing does not apply
    depth = config.anderson_depth if mode == "smooth" else 0
    history = deque(maxlen=max(depth, 1))
    u = initial_control(problem, config, model).values
    omega = config.relaxation
    started = time.monotonic()

    objective_history = []
    update_history = []
    converged = False
    iteration = 0
    update_norm = float("inf")
    accepted = best = None
    since_best = rejected = 0
    accelerated = False
    best_dn = None

    try:
        while iteration < config.max_iterations:
            iteration += 1
            control = Trajectory(grid, u)
            states, breakdown = evaluate(problem, grid, control, dynamics=dynamics, model=model)
            costates = costate_sweep(
                problem, grid, states, control, costate_rhs, costate_terminal, staged_costates
            )
            objective_history.append(breakdown.total_smoothed)
            if mode == "dn" and (best_dn is None or breakdown.total_exact > best_dn[0].total_exact):
                best_dn = (breakdown, control, states, costates)

            candidate = np.clip(at_nodes(states.values, costates.values), lower, upper)
            f = candidate - u
            residual = float(np.max(np.abs(f)))
            rms = float(np.sqrt(np.mean(f * f)))
            # the change a plain relaxed step at the configured rate would make
            update_norm = config.relaxation * residual
            update_history.append(update_norm)
            logger.debug(
                f"Sweep {iteration}: objective={breakdown.total_smoothed:.10g} "
                f"update={update_norm:.3e} relaxation={omega:g}"
            )

            if update_norm < config.tolerance:
                converged = True
                u = candidate
                break

            if accepted is None or rms <= RESIDUAL_SLACK * accepted.rms:
                if accepted is not None and depth:
                    history.append((u - accepted.u, f - accepted.f))
                accepted = _Accepted(u, f, rms)
                if best is None or rms < best.rms:
                    best = accepted
                    since_best = 0
                    omega = min(omega * RELAXATION_GROWTH, config.relaxation)
                else:
                    since_best += 1
            else:
                rejected += 1
                since_best += 1
                if accelerated:
                    history.clear()
                else:
                    omega = max(omega / 2.0, MIN_RELAXATION)
                logger.debug(
                    f"Sweep {iteration} rejected: residual {rms:.3e} against {accepted.rms:.3e}; "
                    f"relaxation {omega:g}"
                )

            if since_best >= STALL_PATIENCE:
                omega = max(omega / 2.0, MIN_RELAXATION)
                since_best = 0
                history.clear()
                accepted = best
                logger.debug(
                    f"No better residual than {best.rms:.3e} for {STALL_PATIENCE} sweeps; "
                    f"back to the best control with relaxation {omega:g}"
                )

            accelerated = bool(history)
            u = np.clip(_anderson_step(accepted.u, accepted.f, history, omega), lower, upper)

        control = Trajectory(grid, u)
        states, breakdown = evaluate(problem, grid, control, dynamics=dynamics, model=model)
        costates = costate_sweep(
            problem, grid, states, control, costate_rhs, costate_terminal, staged_costates
        )
    except NonFiniteStateError as e:
        e.iteration = iteration
        logger.error(f"Solver aborted at sweep {iteration}: {e}")
        raise

    if mode == "dn" and not converged and best_dn is not None and best_dn[0].total_exact > breakdown.total_exact:
        breakdown, control, states, costates = best_dn

    elapsed = time.monotonic() - started
    if converged:
        logger.info(
            f"FBS ({mode}) converged after {iteration} sweeps in {elapsed:.1f}s: "
            f"objective={breakdown.total_smoothed:.6f} peak={breakdown.peak_exact:.6f}"
        )
    else:
        logger.info(
            f"FBS ({mode}) stopped after {iteration} sweeps without converging "
            f"(last update {update_norm:.3e}, {rejected} rejected); objective={breakdown.total_exact:.6f}"
        )

    return FbsSolution(
        control=control,
        states=states,
        costates=costates,
        breakdown=breakdown,
        converged=converged,
        iterations_used=iteration,
        final_update_norm=update_norm,
        relaxation=omega,
        mode=mode,
        objective_history=objective_history,
        update_history=update_history,
        elapsed_seconds=elapsed,
        rejected_sweeps=rejected,
    )


def solve(
    problem: CombinedProblem,
    costate_rhs: Callable,
    costate_terminal: Callable,
    control_update: Callable,
    config: FbsConfig,
) -> FbsSolution:
    """Run forward-backward sweeps until the control settles.

    Callbacks:
      costate_rhs(t, x, y, lam_x, lam_y, u) -> (d_lam_x, d_lam_y)
      costate_terminal(x_T, y_T) -> (lam_x(T), lam_y(T))
      control_update(t, x, y, lam_x, lam_y) -> candidate control

    A GridCallback in place of costate_rhs or control_update is bound to the
    grid once and its fast form used for every sweep.
    Hitting max_iterations is reported through ``converged``, not raised.
    """
    return _sweep(problem, costate_rhs, costate_terminal, control_update, config, "smooth")


def solve_dn(problem, costate_rhs_indicator, costate_terminal, control_update, config):
    """Sweeps on the raw indicator dynamics; keeps the best iterate by exact objective."""
    return _sweep(problem, costate_rhs_indicator, costate_terminal, control_update, config, "dn")


# --- Hamiltonian and diagnostics ---


def problem_hamiltonian(problem: CombinedProblem):
    """H(t, x, y, u, lam_x, lam_y) = lam_x . f + lam_y * dy + L for the smoothed dynamics."""
    def hamiltonian(t, x, y, u, lam_x, lam_y):
        x = np.atleast_1d(x)
        u = np.atleast_1d(u)
        dx, dy = augmented_rhs(problem, t, x, y, u)
        return (
            float(np.dot(np.atleast_1d(lam_x), dx))
            + float(lam_y) * dy
            + float(problem.running_reward(t, x, u))
        )

    return hamiltonian


def _probe_points(lo, hi, n_probe):
    axes = [np.linspace(a, b, n_probe) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def hamiltonian_maximality_report(problem, solution, hamiltonian, n_probe=101):
    """Fraction of nodes where the control is within 1e-6(1+|H|) of the best probed H."""
    grid = solution.control.grid
    lower, upper = problem.control_bounds_on(grid)
    n = problem.state_dim
    times = grid.nodes
    sv = solution.states.values
    cv = solution.costates.values
    ok = 0
    for k in range(grid.n_nodes):
        args = (sv[k, :n], sv[k, n])
        h_star = hamiltonian(times[k], *args, solution.control.values[k], cv[k, :n], cv[k, n])
        h_probe = max(
            hamiltonian(times[k], *args, u, cv[k, :n], cv[k, n])
            for u in _probe_points(lower[k], upper[k], n_probe)
        )
        if h_star >= h_probe - 1e-6 * (1.0 + abs(h_star)):
            ok += 1
    return ok / grid.n_nodes


def _sample_nodes(n_steps, n_nodes_sampled):
    picks = np.linspace(1, n_steps - 1, num=min(n_nodes_sampled, n_steps - 1))
    return sorted(set(int(round(p)) for p in picks))


def adjoint_gradient_check(
    problem,
    costate_rhs,
    costate_terminal,
    hamiltonian,
    control,
    n_nodes_sampled=10,
    nodes=None,
):
    """Max relative error between finite-difference dJ/du_k and the adjoint gradient.

    The adjoint gradient at node k is dt * (dL/du at t_k + the mean of
    d(H - L)/du at t_k and t_{k+1}), matching how u_k enters the discretized
    objective (trapezoid weight at node k, held over step k).
    """
    grid = control.grid
    model = problem.bind(grid)
    control = clamp_control(problem, grid, control, model=model)
    states, _ = evaluate(problem, grid, control, model=model)
    costates = costate_sweep(problem, grid, states, control, costate_rhs, costate_terminal)
    n = problem.state_dim
    times = grid.nodes
    dt = grid.dt
    sv = states.values
    cv = costates.values

    def dynamic_part(k, u):
        x = sv[k, :n]
        return hamiltonian(times[k], x, sv[k, n], u, cv[k, :n], cv[k, n]) - float(
            problem.running_reward(times[k], x, np.atleast_1d(u))
        )

    if nodes is None:
        nodes = _sample_nodes(grid.n_steps, n_nodes_sampled)

    worst = 0.0
    for k in nodes:
        base = control.values[k].copy()
        for j in range(base.size):
            h = 1e-5 * max(1.0, abs(base[j]))
            up, down = base.copy(), base.copy()
            up[j] += h
            down[j] -= h

            def total(u_row):
                values = control.values.copy()
                values[k] = u_row
                return evaluate(problem, grid, Trajectory(grid, values), model=model)[1].total_smoothed

            fd = (total(up) - total(down)) / (2.0 * h)

            d_run = (
                float(problem.running_reward(times[k], sv[k, :n], up))
                - float(problem.running_reward(times[k], sv[k, :n], down))
            ) / (2.0 * h)
            d_dyn_left = (dynamic_part(k, up) - dynamic_part(k, down)) / (2.0 * h)
            d_dyn_right = (dynamic_part(k + 1, up) - dynamic_part(k + 1, down)) / (2.0 * h)
            adjoint = dt * (d_run + 0.5 * (d_dyn_left + d_dyn_right))

            scale = max(abs(fd), abs(adjoint), 1e-12)
            err = abs(fd - adjoint) / scale
            logger.debug(f"Gradient check node {k}: fd={fd:.6e} adjoint={adjoint:.6e} rel={err:.2e}")
            worst = max(worst, err)
    return worst


# --- generic control update ---


def make_grid_control_update(problem, hamiltonian, n_points=GRID_MAXIMIZER_POINTS, refine=True):
    """Scalar-control update that maximizes H on a uniform grid of the box.

    The best grid point is polished by one golden-section search over its two
    neighbours when it is interior and strictly better than both.
    """

    def control_update(t, x, y, lam_x, lam_y):
        lo = float(np.atleast_1d(problem.control_lower(t))[0])
        hi = float(np.atleast_1d(problem.control_upper(t))[0])
        if hi <= lo:
            return lo
        us = np.linspace(lo, hi, n_points)
        hs = np.array([hamiltonian(t, x, y, u, lam_x, lam_y) for u in us])
        i = int(np.argmax(hs))
        best_u, best_h = float(us[i]), float(hs[i])
        if refine and 0 < i < n_points - 1 and hs[i] > hs[i - 1] and hs[i] > hs[i + 1]:
            try:
                res = minimize_scalar(
                    lambda u: -hamiltonian(t, x, y, u, lam_x, lam_y),
                    bracket=(us[i - 1], us[i], us[i + 1]),
                    method="golden",
                )
                u_ref = float(np.clip(res.x, us[i - 1], us[i + 1]))
                h_ref = hamiltonian(t, x, y, u_ref, lam_x, lam_y)
                if h_ref > best_h:
                    best_u = u_ref
            except ValueError as e:
                logger.debug(f"Golden-section polish skipped at t={t:.6g}: {e}")
        return best_u

    return control_update


def maximize_on_candidates(h_of_u, candidates):
    """Argmax of h over candidate controls; ties go to the smaller control."""
    best_u = None
    best_h = None
    for u in sorted(candidates):
        h = h_of_u(u)
        if best_h is None or h > best_h:
            best_u, best_h = u, h
    return best_u


def maximize_on_candidate_rows(h, candidates):
    """Row-wise maximize_on_candidates: h and candidates are (n_nodes, n_candidates)."""
    order = np.argsort(candidates, axis=1, kind="stable")
    ranked = np.take_along_axis(candidates, order, axis=1)
    best = np.argmax(np.take_along_axis(h, order, axis=1), axis=1)
    return ranked[np.arange(ranked.shape[0]), best]


def map_solves(fn, items, workers=1):
    """Apply a top-level (picklable) solve function to each item, keeping input order."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))
