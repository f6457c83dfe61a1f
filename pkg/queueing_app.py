"""Peak-congestion control of a fluid queue.

The queue length x obeys dx/dt = alpha(t) - mu with service rate
mu = (alpha + x) u, u in [0, u_bar]. Running cost rho x + beta (mu - mu_id)^2,
terminal cost eta x + sigma y, with y the running maximum of x.
"""
import logging
import math
from functools import partial

import numpy as np
import pandas as pd

from fbs_solver import (
    FbsConfig,
    GridCallback,
    map_solves,
    maximize_on_candidate_rows,
    maximize_on_candidates,
    solve,
)
from grid_ode import trapezoid_weights
from models import QueueParams
from problem_core import CombinedProblem, GridModel
from smoothing import dpsi_dd, psi, psi_array

logger = logging.getLogger(__name__)

MODES = ("peak_vs_utilization", "congestion_vs_utilization")


def service_rate(alpha_t, x, u):
    mu = (alpha_t + x) * u
    if mu < 0:
        logger.warning(f"Negative service rate {mu:.6g} (alpha={alpha_t:.6g}, x={x:.6g}, u={u:.6g})")
    return mu


def queue_rhs(params, t, x, u):
    alpha_t = params.alpha.value(t)
    return alpha_t - service_rate(alpha_t, x, u)


def running_cost_reward(params, t, x, u):
    mu = (params.alpha.value(t) + x) * u
    return -(params.rho * x + params.beta * (mu - params.mu_id) ** 2)


def terminal_cost_reward(params, x, y):
    return -(params.eta * x + params.sigma * y)


def costs(params, t, x, u, y):
    """(running reward, terminal reward) at one point."""
    return running_cost_reward(params, t, x, u), terminal_cost_reward(params, x, y)


def hamiltonian(params, t, x, y, u, lam_x, lam_y):
    alpha_t = params.alpha.value(t)
    mu = (alpha_t + x) * u
    x_dot = alpha_t - mu
    return (
        lam_x * x_dot
        + lam_y * max(x_dot, 0.0) * psi(params.smoothing, x - y)
        - params.rho * x
        - params.beta * (mu - params.mu_id) ** 2
    )


def costate_rhs_queue(params, t, x, y, lam_x, lam_y, u):
    alpha_t = params.alpha.value(t)
    mu = (alpha_t + x) * u
    inflow = max(alpha_t - mu, 0.0)
    filling = 1.0 if alpha_t >= mu else 0.0
    d = x - y
    slope = dpsi_dd(params.smoothing, d)
    d_lam_x = (
        lam_x * u
        - lam_y * (slope * inflow - psi(params.smoothing, d) * u * filling)
        + params.rho
        + 2.0 * params.beta * u * (mu - params.mu_id)
    )
    d_lam_y = lam_y * slope * inflow
    return d_lam_x, d_lam_y


def costate_terminal_queue(params, x_T, y_T):
    return -params.eta, -params.sigma


def control_update_queue(params, t, x, y, lam_x, lam_y):
    """Hamiltonian-maximizing u in [0, u_bar].

    Below u_b = alpha / (alpha + x) the queue fills and the peak term is live;
    above it the queue drains. Each side is a concave quadratic in u when
    beta > 0 and linear otherwise.
    """
    alpha_t = params.alpha.value(t)
    c = alpha_t + x
    u_bar = params.u_bar
    u_b = alpha_t / c if c > 0 else math.inf
    weight = psi(params.smoothing, x - y)

    candidates = {0.0, u_bar}
    if u_b <= u_bar:
        candidates.add(u_b)
    if params.beta > 0 and c > 0:
        two_beta_c = 2.0 * params.beta * c
        filling_hi = min(u_b, u_bar)
        u_fill = (2.0 * params.beta * params.mu_id - lam_x - lam_y * weight) / two_beta_c
        candidates.add(min(max(u_fill, 0.0), filling_hi))
        if u_b <= u_bar:
            u_drain = (2.0 * params.beta * params.mu_id - lam_x) / two_beta_c
            candidates.add(min(max(u_drain, u_b), u_bar))
    return maximize_on_candidates(
        lambda u: hamiltonian(params, t, x, y, u, lam_x, lam_y), candidates
    )


# --- solver wiring ---


def grid_model(params: QueueParams, grid) -> GridModel:
    alpha = params.alpha.sample(grid.stage_times)
    staged_alpha = alpha.tolist()

    def rhs(j, s, u):
        a_j = staged_alpha[j]
        x_dot = a_j - service_rate(a_j, s[0], u[0])
        y_dot = x_dot * psi(params.smoothing, s[0] - s[1]) if x_dot > 0 else 0.0
        return np.array([x_dot, y_dot])

    def rhs_indicator(j, s, u):
        a_j = staged_alpha[j]
        x_dot = a_j - service_rate(a_j, s[0], u[0])
        y_dot = x_dot if (s[0] >= s[1] and x_dot >= 0.0) else 0.0
        return np.array([x_dot, y_dot])

    alpha_nodes = alpha[::2]

    def running(x, u):
        x, u = x[:, 0], u[:, 0]
        mu = (alpha_nodes + x) * u
        return -(params.rho * x + params.beta * (mu - params.mu_id) ** 2)

    lower = np.zeros((grid.n_nodes, 1))
    return GridModel(
        grid=grid,
        lower=lower,
        upper=np.full_like(lower, params.u_bar),
        rhs=rhs,
        rhs_indicator=rhs_indicator,
        running_reward=running,
        peak=lambda x: x[:, 0],
    )


def build_problem(params: QueueParams) -> CombinedProblem:
    return CombinedProblem(
        dynamics=lambda t, x, u: np.array([queue_rhs(params, t, x[0], u[0])]),
        running_reward=lambda t, x, u: running_cost_reward(params, t, x[0], u[0]),
        peak=lambda t, x: x[0],
        peak_dx=lambda t, x: np.ones(1),
        terminal_reward=lambda x: -params.eta * x[0],
        sigma=params.sigma,
        control_lower=lambda t: np.zeros(1),
        control_upper=lambda t: np.array([params.u_bar]),
        smoothing=params.smoothing,
        x0=np.array([params.x0]),
        y0=params.start_peak,
        on_grid=partial(grid_model, params),
    )


def _costates(params, t, x, y, lam_x, lam_y, u):
    d_x, d_y = costate_rhs_queue(params, t, x[0], y, lam_x[0], lam_y, u[0])
    return np.array([d_x]), d_y


def _staged_costates(params, grid):
    staged_alpha = params.alpha.sample(grid.stage_times).tolist()
    spec = params.smoothing

    def rhs(j, lam, row):
        x, y, u = row
        mu = (staged_alpha[j] + x) * u
        inflow = max(staged_alpha[j] - mu, 0.0)
        filling = 1.0 if staged_alpha[j] >= mu else 0.0
        d = x - y
        slope = dpsi_dd(spec, d)
        d_lam_x = (
            lam[0] * u
            - lam[1] * (slope * inflow - psi(spec, d) * u * filling)
            + params.rho
            + 2.0 * params.beta * u * (mu - params.mu_id)
        )
        return np.array([d_lam_x, lam[1] * slope * inflow])

    return rhs


def _terminal(params, x_T, y_T):
    lam_x, lam_y = costate_terminal_queue(params, x_T[0], y_T)
    return np.array([lam_x]), lam_y


def _update(params, t, x, y, lam_x, lam_y):
    return control_update_queue(params, t, x[0], y, lam_x[0], lam_y)


def _node_updates(params, grid):
    """control_update_queue at every node at once.

    Candidates that do not apply at a node are replaced by 0, which is always
    a candidate, so the argmax is unchanged.
    """
    alpha = params.alpha.sample(grid.nodes)
    u_bar = params.u_bar

    def update(x, y, lam_x, lam_y):
        x, lam_x = x[:, 0], lam_x[:, 0]
        c = alpha + x
        open_queue = c > 0
        c_safe = np.where(open_queue, c, 1.0)
        u_b = np.where(open_queue, alpha / c_safe, np.inf)
        switches = u_b <= u_bar
        weight = psi_array(params.smoothing, x - y)
        zeros = np.zeros_like(x)

        columns = [zeros, np.full_like(x, u_bar), np.where(switches, u_b, 0.0)]
        if params.beta > 0:
            two_beta_c = 2.0 * params.beta * c_safe
            u_fill = (2.0 * params.beta * params.mu_id - lam_x - lam_y * weight) / two_beta_c
            u_fill = np.minimum(np.maximum(u_fill, 0.0), np.minimum(u_b, u_bar))
            u_drain = (2.0 * params.beta * params.mu_id - lam_x) / two_beta_c
            u_drain = np.minimum(np.maximum(u_drain, np.where(switches, u_b, 0.0)), u_bar)
            columns.append(np.where(open_queue, u_fill, 0.0))
            columns.append(np.where(open_queue & switches, u_drain, 0.0))
        cands = np.stack(columns, axis=1)

        mu = c[:, None] * cands
        x_dot = alpha[:, None] - mu
        h = (
            lam_x[:, None] * x_dot
            + lam_y[:, None] * np.maximum(x_dot, 0.0) * weight[:, None]
            - params.rho * x[:, None]
            - params.beta * (mu - params.mu_id) ** 2
        )
        return maximize_on_candidate_rows(h, cands)

    return update


def _hamiltonian(params, t, x, y, u, lam_x, lam_y):
    return hamiltonian(
        params, t, float(np.atleast_1d(x)[0]), y, float(np.atleast_1d(u)[0]),
        float(np.atleast_1d(lam_x)[0]), lam_y,
    )


def callbacks(params):
    return (
        GridCallback(partial(_costates, params), partial(_staged_costates, params)),
        partial(_terminal, params),
        GridCallback(partial(_update, params), partial(_node_updates, params)),
    )


def solver_hamiltonian(params):
    return partial(_hamiltonian, params)


# --- runs and reports ---


def cost_integrals(params, solution):
    """Trapezoid integrals of g(x) = x and h(mu) = (mu - mu_id)^2 on the solution grid."""
    grid = solution.control.grid
    w = trapezoid_weights(grid)
    x = solution.x[:, 0]
    u = solution.u[:, 0]
    mu = (params.alpha.sample(grid.nodes) + x) * u
    return float(np.dot(w, x)), float(np.dot(w, (mu - params.mu_id) ** 2))


def solve_queue(params: QueueParams, fbs_config: FbsConfig):
    problem = build_problem(params)
    solution = solve(problem, *callbacks(params), fbs_config)
    int_g, int_h = cost_integrals(params, solution)
    alpha = params.alpha.sample(solution.control.grid.nodes)
    lam_y = solution.costates.column(1)
    report = {
        "peak": solution.breakdown.peak_smoothed,
        "peak_exact": solution.breakdown.peak_exact,
        "integral_g": int_g,
        "integral_h": int_h,
        "service_rate_nonnegative": bool(np.all(solution.x[:, 0] > -alpha)),
        "lambda_y_range": [float(lam_y.min()), float(lam_y.max())],
    }
    logger.info(
        f"Queue sigma={params.sigma:g} rho={params.rho:g} beta={params.beta:g}: "
        f"y(T)={report['peak']:.6f} int_g={int_g:.6f} int_h={int_h:.6f} converged={solution.converged}"
    )
    return solution, report


def _weighted(params, mode, weight):
    if mode == "peak_vs_utilization":
        return params.model_copy(update={"sigma": weight, "rho": 0.0})
    return params.model_copy(update={"sigma": 0.0, "rho": weight})


def _frontier_row(job):
    params, mode, weight, fbs_config = job
    weighted = _weighted(params, mode, weight)
    try:
        solution, report = solve_queue(weighted, fbs_config)
    except Exception as e:
        logger.error(f"Queue row {mode} weight={weight:g} failed: {e}", exc_info=True)
        return {"weight": weight, "status": "failed", "error": str(e)}
    return {
        "weight": weight,
        "sigma": weighted.sigma,
        "rho": weighted.rho,
        "y_T": report["peak"],
        "peak_exact": report["peak_exact"],
        "integral_g": report["integral_g"],
        "integral_h": report["integral_h"],
        "converged": solution.converged,
        "iterations": solution.iterations_used,
        "status": "ok",
        "error": None,
    }


def _warn_if_not_monotone(frame, column, mode, increasing):
    values = frame.loc[frame["status"] == "ok", column].to_numpy()
    steps = np.diff(values)
    bad = steps < -1e-3 if increasing else steps > 1e-3
    if np.any(bad):
        logger.warning(f"Frontier {mode}: {column} is not monotone along the swept weight")
        return False
    return True


def pareto_sweep(params_base, mode, weight_list, fbs_config, workers=1):
    """Solve once per weight; rows carry y(T), int g and int h so both frontiers can be drawn."""
    if mode not in MODES:
        raise ValueError(f"unknown frontier mode '{mode}'")
    if any(w < 0 for w in weight_list):
        raise ValueError("weights must be nonnegative")
    weights = sorted(float(w) for w in weight_list)
    jobs = [(params_base, mode, w, fbs_config) for w in weights]
    frame = pd.DataFrame(map_solves(_frontier_row, jobs, workers))
    if (frame["status"] == "ok").any():
        if mode == "peak_vs_utilization":
            _warn_if_not_monotone(frame, "y_T", mode, increasing=False)
        else:
            _warn_if_not_monotone(frame, "integral_g", mode, increasing=False)
        h = frame.loc[frame["status"] == "ok", "integral_h"].to_numpy()
        if len(h) > 1 and not (np.all(np.diff(h) >= -1e-3) or np.all(np.diff(h) <= 1e-3)):
            logger.warning(f"Frontier {mode}: integral_h is not monotone along the swept weight")
    return frame


def pareto_comparison(peak_frontier, congestion_frontier):
    """Pair every peak-frontier row with the congestion row of nearest int h."""
    peak_ok = peak_frontier[peak_frontier["status"] == "ok"]
    cong_ok = congestion_frontier[congestion_frontier["status"] == "ok"]
    rows = []
    if cong_ok.empty:
        return pd.DataFrame(rows)
    cong_h = cong_ok["integral_h"].to_numpy()
    for _, row in peak_ok.iterrows():
        match = cong_ok.iloc[int(np.argmin(np.abs(cong_h - row["integral_h"])))]
        rows.append({
            "sigma": row["sigma"],
            "rho": match["rho"],
            "integral_h_peak": row["integral_h"],
            "integral_h_congestion": match["integral_h"],
            "y_T_peak": row["y_T"],
            "y_T_congestion": match["y_T"],
            "integral_g_peak": row["integral_g"],
            "integral_g_congestion": match["integral_g"],
            "peak_reduction": (match["y_T"] - row["y_T"]) / match["y_T"] if match["y_T"] else np.nan,
            "congestion_degradation": (
                (row["integral_g"] - match["integral_g"]) / match["integral_g"]
                if match["integral_g"] else np.nan
            ),
        })
    return pd.DataFrame(rows)


def match_utilization(
    params, target, fbs_config, rel_tol=0.01, max_steps=30, beta_bounds=(1e-2, 1e4)
):
    """Bisect beta on a log scale until int h is within rel_tol of target.

    int h falls as beta rises. When the target lies outside what the bracket
    reaches, the closer end is returned with a warning.
    """
    history = []

    def attempt(beta):
        trial = params.model_copy(update={"beta": beta})
        solution, report = solve_queue(trial, fbs_config)
        history.append({
            "beta": beta,
            "integral_h": report["integral_h"],
            "y_T": report["peak"],
            "integral_g": report["integral_g"],
            "converged": solution.converged,
        })
        return trial, solution, report

    lo, hi = math.log(beta_bounds[0]), math.log(beta_bounds[1])
    lo_run = attempt(math.exp(lo))
    hi_run = attempt(math.exp(hi))
    best = min((lo_run, hi_run), key=lambda r: abs(r[2]["integral_h"] - target))

    if not (hi_run[2]["integral_h"] <= target <= lo_run[2]["integral_h"]):
        logger.warning(
            f"Target int h={target} outside [{hi_run[2]['integral_h']:.4f}, "
            f"{lo_run[2]['integral_h']:.4f}] reachable by beta in {beta_bounds}"
        )
    else:
        for _ in range(max_steps):
            if abs(best[2]["integral_h"] - target) <= rel_tol * target:
                break
            mid = 0.5 * (lo + hi)
            run = attempt(math.exp(mid))
            if abs(run[2]["integral_h"] - target) < abs(best[2]["integral_h"] - target):
                best = run
            if run[2]["integral_h"] > target:
                lo = mid
            else:
                hi = mid

    trial, solution, report = best
    report = dict(report, beta=trial.beta, target_utilization=target,
                  utilization_matched=abs(report["integral_h"] - target) <= rel_tol * target)
    return trial, solution, report, pd.DataFrame(history)
