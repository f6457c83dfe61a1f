"""Inventory storage design with dynamic pricing.

Demand is (alpha - beta p)^+. With the price set to p = a u + alpha / (2 beta),
the production rate u is the only control, the level follows
dx/dt = u (1 + a beta) - alpha / 2 and the peak penalty acts on x itself.
"""
import logging
from dataclasses import dataclass
from functools import partial

import numpy as np
import pandas as pd

from fbs_solver import (
    FbsConfig,
    GridCallback,
    hamiltonian_maximality_report,
    map_solves,
    maximize_on_candidate_rows,
    maximize_on_candidates,
    solve,
    solve_dn,
)
from grid_ode import trapezoid_weights
from models import InventoryParams
from problem_core import CombinedProblem, GridModel
from smoothing import dpsi_dd, psi, psi_array

logger = logging.getLogger(__name__)

MONOTONICITY_MIN_LEVEL = 0.02
TERMINAL_SHORTAGE_TOL = 1e-3
INTERIOR_EPS = 1e-9


def demand(alpha_t, beta_t, p):
    return max(alpha_t - beta_t * p, 0.0)


def price_from_rate(u, alpha_t, beta_t, a):
    return a * u + alpha_t / (2.0 * beta_t)


def gamma_factor(params, t):
    return 1.0 + params.a * params.beta.value(t)


def rate_bound(params, t):
    """Largest admissible production rate alpha / (2 a beta)."""
    return params.alpha.value(t) / (2.0 * params.a * params.beta.value(t))


def reduced_rhs(params, t, x, u):
    return u * gamma_factor(params, t) - 0.5 * params.alpha.value(t)


def holding_cost(x, c_hold, c_short):
    return (c_short if x < 0 else c_hold) * x * x


def holding_cost_slope(x, c_hold, c_short):
    return 2.0 * (c_short if x < 0 else c_hold) * x


def running_reward(params, t, x):
    """Control-free part of the reward rate: alpha^2 / (4 beta) - h(x)."""
    alpha_t = params.alpha.value(t)
    return alpha_t * alpha_t / (4.0 * params.beta.value(t)) - holding_cost(x, params.C_h, params.C_s)


def production_cost(params, t, u):
    return params.a * u * u * gamma_factor(params, t)


def terminal_reward(params, x):
    return -holding_cost(x, params.C_h_T, params.C_s_T)


def _peak_weight(params, x, y, indicator):
    if indicator:
        return 1.0 if x >= y else 0.0
    return psi(params.smoothing, x - y)


def hamiltonian(params, t, x, y, u, lam_x, lam_y, indicator=False):
    x_dot = reduced_rhs(params, t, x, u)
    y_dot = max(x_dot, 0.0) * _peak_weight(params, x, y, indicator)
    return (
        lam_x * x_dot
        + lam_y * y_dot
        + running_reward(params, t, x)
        - production_cost(params, t, u)
    )


def costate_rhs(params, t, x, y, lam_x, lam_y, u, mode="paper_literal"):
    x_dot = reduced_rhs(params, t, x, u)
    if mode == "gradient_consistent":
        x_dot = max(x_dot, 0.0)
    band = lam_y * dpsi_dd(params.smoothing, x - y) * x_dot
    return holding_cost_slope(x, params.C_h, params.C_s) - band, band


def costate_rhs_indicator(params, t, x, y, lam_x, lam_y, u):
    # the indicator has zero derivative, so lambda_y stays at its terminal value
    return holding_cost_slope(x, params.C_h, params.C_s), 0.0


def costate_terminal(params, x_T, y_T, mode="paper_literal"):
    coeff = params.C_s_T if x_T < 0 else params.C_h_T
    if mode == "gradient_consistent":
        coeff *= 2.0
    return -coeff * x_T, -params.sigma


def control_update(params, t, x, y, lam_x, lam_y, indicator=False):
    """Hamiltonian-maximizing production rate in [0, alpha / (2 a beta)].

    H is concave-quadratic on each side of u_b = alpha / (2 gamma), where the
    level switches from falling to rising and the peak term switches on. Each
    side's stationary point (clipped to its side), the box ends and u_b are
    compared directly.
    """
    upper = rate_bound(params, t)
    u_b = min(0.5 * params.alpha.value(t) / gamma_factor(params, t), upper)
    weight = _peak_weight(params, x, y, indicator)
    two_a = 2.0 * params.a
    falling = min(max(lam_x / two_a, 0.0), u_b)
    rising = min(max((lam_x + lam_y * weight) / two_a, u_b), upper)
    return maximize_on_candidates(
        lambda u: hamiltonian(params, t, x, y, u, lam_x, lam_y, indicator),
        {0.0, upper, u_b, falling, rising},
    )


# --- solver wiring ---


@dataclass(frozen=True)
class Coefficients:
    """alpha, beta and the rates built from them, sampled on grid.stage_times."""

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    upper: np.ndarray

    @classmethod
    def sample(cls, params, grid):
        times = grid.stage_times
        alpha = params.alpha.sample(times)
        beta = params.beta.sample(times)
        return cls(alpha, beta, 1.0 + params.a * beta, alpha / (2.0 * params.a * beta))

    def nodes(self, name):
        return getattr(self, name)[::2]


def holding_costs(x, c_hold, c_short):
    return np.where(x < 0, c_short, c_hold) * x * x


def grid_model(params: InventoryParams, grid) -> GridModel:
    coeffs = Coefficients.sample(params, grid)
    gamma = coeffs.gamma.tolist()
    half_alpha = (0.5 * coeffs.alpha).tolist()
    spec = params.smoothing

    def rhs(j, s, u):
        x_dot = u[0] * gamma[j] - half_alpha[j]
        y_dot = x_dot * psi(spec, s[0] - s[1]) if x_dot > 0 else 0.0
        return np.array([x_dot, y_dot])

    def rhs_indicator(j, s, u):
        x_dot = u[0] * gamma[j] - half_alpha[j]
        y_dot = x_dot if (s[0] >= s[1] and x_dot >= 0.0) else 0.0
        return np.array([x_dot, y_dot])

    alpha = coeffs.nodes("alpha")
    base_reward = alpha * alpha / (4.0 * coeffs.nodes("beta"))
    gamma_nodes = coeffs.nodes("gamma")

    def running(x, u):
        x, u = x[:, 0], u[:, 0]
        return base_reward - holding_costs(x, params.C_h, params.C_s) - params.a * u * u * gamma_nodes

    upper = coeffs.nodes("upper").reshape(-1, 1)
    return GridModel(
        grid=grid,
        lower=np.zeros_like(upper),
        upper=upper,
        rhs=rhs,
        rhs_indicator=rhs_indicator,
        running_reward=running,
        peak=lambda x: x[:, 0],
    )


def build_problem(params: InventoryParams) -> CombinedProblem:
    return CombinedProblem(
        dynamics=lambda t, x, u: np.array([reduced_rhs(params, t, x[0], u[0])]),
        running_reward=lambda t, x, u: running_reward(params, t, x[0]) - production_cost(params, t, u[0]),
        peak=lambda t, x: x[0],
        peak_dx=lambda t, x: np.ones(1),
        terminal_reward=lambda x: terminal_reward(params, x[0]),
        sigma=params.sigma,
        control_lower=lambda t: np.zeros(1),
        control_upper=lambda t: np.array([rate_bound(params, t)]),
        smoothing=params.smoothing,
        x0=np.array([params.x0]),
        y0=params.start_peak,
        on_grid=partial(grid_model, params),
    )


def _costates(params, mode, t, x, y, lam_x, lam_y, u):
    d_x, d_y = costate_rhs(params, t, x[0], y, lam_x[0], lam_y, u[0], mode)
    return np.array([d_x]), d_y


def _costates_indicator(params, t, x, y, lam_x, lam_y, u):
    d_x, d_y = costate_rhs_indicator(params, t, x[0], y, lam_x[0], lam_y, u[0])
    return np.array([d_x]), d_y


def _staged_costates(params, mode, grid):
    coeffs = Coefficients.sample(params, grid)
    gamma = coeffs.gamma.tolist()
    half_alpha = (0.5 * coeffs.alpha).tolist()
    spec = params.smoothing
    c_hold, c_short = params.C_h, params.C_s
    consistent = mode == "gradient_consistent"

    def rhs(j, lam, row):
        x = row[0]
        x_dot = row[2] * gamma[j] - half_alpha[j]
        if consistent and x_dot < 0.0:
            x_dot = 0.0
        band = lam[1] * dpsi_dd(spec, x - row[1]) * x_dot
        return np.array([2.0 * (c_short if x < 0 else c_hold) * x - band, band])

    return rhs


def _staged_costates_indicator(params, grid):
    c_hold, c_short = params.C_h, params.C_s

    def rhs(j, lam, row):
        x = row[0]
        return np.array([2.0 * (c_short if x < 0 else c_hold) * x, 0.0])

    return rhs


def _terminal(params, mode, x_T, y_T):
    lam_x, lam_y = costate_terminal(params, x_T[0], y_T, mode)
    return np.array([lam_x]), lam_y


def _update(params, indicator, t, x, y, lam_x, lam_y):
    return control_update(params, t, x[0], y, lam_x[0], lam_y, indicator)


def _node_updates(params, indicator, grid):
    """control_update at every node at once, same candidates and tie rule."""
    coeffs = Coefficients.sample(params, grid)
    alpha = coeffs.nodes("alpha")
    gamma = coeffs.nodes("gamma")
    upper = coeffs.nodes("upper")
    u_b = np.minimum(0.5 * alpha / gamma, upper)
    base_reward = alpha * alpha / (4.0 * coeffs.nodes("beta"))
    two_a = 2.0 * params.a

    def update(x, y, lam_x, lam_y):
        x, lam_x = x[:, 0], lam_x[:, 0]
        if indicator:
            weight = np.where(x >= y, 1.0, 0.0)
        else:
            weight = psi_array(params.smoothing, x - y)
        falling = np.minimum(np.maximum(lam_x / two_a, 0.0), u_b)
        rising = np.minimum(np.maximum((lam_x + lam_y * weight) / two_a, u_b), upper)
        cands = np.stack([np.zeros_like(u_b), upper, u_b, falling, rising], axis=1)
        x_dot = cands * gamma[:, None] - 0.5 * alpha[:, None]
        h = (
            lam_x[:, None] * x_dot
            + lam_y[:, None] * (np.maximum(x_dot, 0.0) * weight[:, None])
            + (base_reward - holding_costs(x, params.C_h, params.C_s))[:, None]
            - params.a * cands * cands * gamma[:, None]
        )
        return maximize_on_candidate_rows(h, cands)

    return update


def _hamiltonian(params, t, x, y, u, lam_x, lam_y):
    return hamiltonian(
        params, t, float(np.atleast_1d(x)[0]), y, float(np.atleast_1d(u)[0]),
        float(np.atleast_1d(lam_x)[0]), lam_y,
    )


def callbacks(params, mode="paper_literal"):
    """(costate_rhs, costate_terminal, control_update) in the solver's vector form."""
    return (
        GridCallback(partial(_costates, params, mode), partial(_staged_costates, params, mode)),
        partial(_terminal, params, mode),
        GridCallback(partial(_update, params, False), partial(_node_updates, params, False)),
    )


def dn_callbacks(params, mode="paper_literal"):
    return (
        GridCallback(partial(_costates_indicator, params), partial(_staged_costates_indicator, params)),
        partial(_terminal, params, mode),
        GridCallback(partial(_update, params, True), partial(_node_updates, params, True)),
    )


def solver_hamiltonian(params):
    return partial(_hamiltonian, params)


# --- runs and reports ---


def total_variation(solution):
    return float(np.sum(np.abs(np.diff(solution.x[:, 0]))))


def price_path(params, solution):
    times = solution.control.grid.nodes
    alpha = params.alpha.sample(times)
    beta = params.beta.sample(times)
    return price_from_rate(solution.u[:, 0], alpha, beta, params.a)


def bounds_report(params, solution):
    """Box and demand consistency at every node."""
    times = solution.control.grid.nodes
    u = solution.u[:, 0]
    p = price_path(params, solution)
    alpha = params.alpha.sample(times)
    beta = params.beta.sample(times)
    upper = alpha / (2.0 * params.a * beta)
    served = alpha - beta * p
    return {
        "control_in_box": bool(np.all(u >= 0.0) and np.all(u <= upper)),
        "price_in_box": bool(np.all(p >= 0.0) and np.all(p <= alpha / beta + 1e-12)),
        "demand_nonnegative": bool(np.all(served >= -1e-12)),
    }


def revenue_upper_bound(params, grid):
    """Largest revenue any admissible production plan can earn on this grid.

    The level has no feedback, so RK4 with held rates gives
    x(T) = x0 + sum_k G_k u_k - A with Simpson weights G_k of gamma and A of
    alpha / 2. Holding costs are dropped and the trapezoid production cost is
    bounded below by Cauchy-Schwarz in sum_k G_k u_k; what remains is
    maximized over x(T). Valid for every control on ``grid``, converged or not.
    """
    coeffs = Coefficients.sample(params, grid)
    w = trapezoid_weights(grid)

    def simpson(values):
        return grid.dt / 6.0 * (values[0:-1:2] + 4.0 * values[1::2] + values[2::2])

    gain = simpson(coeffs.gamma)
    drain = float(np.sum(simpson(0.5 * coeffs.alpha))) - params.x0
    held = w[:-1] * coeffs.nodes("gamma")[:-1]
    k = params.a / float(np.sum(gain * gain / held))
    alpha = coeffs.nodes("alpha")
    demand_value = float(np.dot(w, alpha * alpha / (4.0 * coeffs.nodes("beta"))))

    def remaining(z):
        return -k * (z + drain) ** 2 + terminal_reward(params, z)

    ends = [0.0]
    below = -k * drain / (k + params.C_s_T)
    above = -k * drain / (k + params.C_h_T)
    if below < 0:
        ends.append(below)
    if above > 0:
        ends.append(above)
    return demand_value + max(remaining(z) for z in ends)


def structural_checks(solution, params):
    """Shortage at the horizon end and local monotonicity of the production rate."""
    grid = solution.control.grid
    times = grid.nodes
    x = solution.x[:, 0]
    y = solution.y
    u = solution.u[:, 0]
    delta = params.smoothing.delta
    upper = params.alpha.sample(times) / (2.0 * params.a * params.beta.sample(times))

    checked = matched = 0
    for k in range(grid.n_steps):
        if abs(x[k]) <= MONOTONICITY_MIN_LEVEL:
            continue
        if not INTERIOR_EPS < u[k] < upper[k] - INTERIOR_EPS:
            continue
        if x[k] - y[k] >= -delta:
            continue
        checked += 1
        du = u[k + 1] - u[k]
        if (du > 0 and x[k] > 0) or (du < 0 and x[k] < 0):
            matched += 1

    return {
        "terminal_shortage_ok": bool(x[-1] <= TERMINAL_SHORTAGE_TOL),
        "x_T": float(x[-1]),
        "local_monotonicity_fraction": matched / checked if checked else 1.0,
        "monotonicity_nodes": checked,
        "monotonicity_empty": checked == 0,
        "min_level": MONOTONICITY_MIN_LEVEL,
        "terminal_tolerance": TERMINAL_SHORTAGE_TOL,
    }


def solve_case(params: InventoryParams, fbs_config: FbsConfig, maximality_probes=0):
    """Solve one instance; returns the solution and its report."""
    problem = build_problem(params)
    solution = solve(problem, *callbacks(params, fbs_config.costate_terminal_mode), fbs_config)
    bd = solution.breakdown
    report = {
        "revenue": bd.revenue,
        "peak": bd.peak_smoothed,
        "peak_exact": bd.peak_exact,
        "total_variation": total_variation(solution),
        "structural": structural_checks(solution, params),
        "bounds": bounds_report(params, solution),
        "revenue_bound": revenue_upper_bound(params, solution.control.grid),
    }
    if maximality_probes:
        report["hamiltonian_fraction"] = hamiltonian_maximality_report(
            problem, solution, solver_hamiltonian(params), maximality_probes
        )
    logger.info(
        f"Inventory sigma={params.sigma:g}: J={bd.revenue:.6f} y(T)={bd.peak_smoothed:.6f} "
        f"converged={solution.converged}"
    )
    return solution, report


def solve_dn_case(params: InventoryParams, fbs_config: FbsConfig):
    problem = build_problem(params)
    solution = solve_dn(problem, *dn_callbacks(params, fbs_config.costate_terminal_mode), fbs_config)
    bd = solution.breakdown
    return solution, {"revenue": bd.revenue, "peak": bd.peak_smoothed, "peak_exact": bd.peak_exact}


def _failed_row(sigma, exc):
    logger.error(f"Inventory row sigma={sigma:g} failed: {exc}", exc_info=True)
    return {"sigma": sigma, "status": "failed", "error": str(exc)}


def _sigma_row(job):
    params, sigma, fbs_config = job
    try:
        solution, report = solve_case(params.model_copy(update={"sigma": sigma}), fbs_config)
    except Exception as e:
        return _failed_row(sigma, e)
    bd = solution.breakdown
    return {
        "sigma": sigma,
        "J": report["revenue"],
        "J_bound": report["revenue_bound"],
        "y_T": report["peak"],
        "peak_exact": report["peak_exact"],
        "integral": bd.integral_term,
        "terminal": bd.terminal_term,
        "total_variation": report["total_variation"],
        "x_T": report["structural"]["x_T"],
        "converged": solution.converged,
        "iterations": solution.iterations_used,
        "status": "ok",
        "error": None,
    }


def sweep_sigma(params, sigma_list, fbs_config, workers=1):
    """One independent solve per sigma, rows sorted by sigma."""
    if any(s < 0 for s in sigma_list):
        raise ValueError("sigma values must be nonnegative")
    rows = map_solves(_sigma_row, [(params, float(s), fbs_config) for s in sigma_list], workers)
    return pd.DataFrame(rows).sort_values("sigma", kind="stable").reset_index(drop=True)


def _dn_row(job):
    params, sigma, fbs_config = job
    try:
        solution, report = solve_dn_case(params.model_copy(update={"sigma": sigma}), fbs_config)
    except Exception as e:
        return _failed_row(sigma, e)
    return {
        "sigma": sigma,
        "dn_J": report["revenue"],
        "dn_y_T": report["peak"],
        "dn_peak_exact": report["peak_exact"],
        "dn_converged": solution.converged,
        "dn_iterations": solution.iterations_used,
        "status": "ok",
        "error": None,
    }


def dn_compare(params, sigma_list, fbs_config, dn_config, workers=1):
    """Smooth and indicator-dynamics solutions side by side for each sigma.

    Each DN row is also paired with the smooth row whose y(T) is closest, so
    revenues can be compared at (nearly) equal peaks.
    """
    smooth = sweep_sigma(params, sigma_list, fbs_config, workers)
    jobs = [(params, float(s), dn_config) for s in sigma_list]
    dn = pd.DataFrame(map_solves(_dn_row, jobs, workers)).sort_values("sigma", kind="stable")
    table = smooth.reset_index(drop=True).join(
        dn.reset_index(drop=True).drop(columns=["sigma", "status", "error"]), how="left"
    )
    table["status"] = np.where(
        (smooth["status"].to_numpy() == "ok") & (dn["status"].to_numpy() == "ok"), "ok", "failed"
    )

    ok = smooth[smooth["status"] == "ok"]
    matched_sigma, matched_j = [], []
    for _, row in table.iterrows():
        if ok.empty or row["status"] != "ok":
            matched_sigma.append(np.nan)
            matched_j.append(np.nan)
            continue
        nearest = ok.iloc[int(np.argmin(np.abs(ok["y_T"].to_numpy() - row["dn_y_T"])))]
        matched_sigma.append(nearest["sigma"])
        matched_j.append(nearest["J"])
    table["matched_smooth_sigma"] = matched_sigma
    table["matched_smooth_J"] = matched_j
    table["revenue_gap_at_matched_peak"] = table["matched_smooth_J"] - table.get("dn_J", np.nan)
    return table
