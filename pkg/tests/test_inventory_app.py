from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

import inventory_app
from fbs_solver import FbsConfig, adjoint_gradient_check, make_grid_control_update
from grid_ode import Trajectory, make_grid
from models import InventoryParams, SignalSpec
from problem_core import evaluate


def _flat(**overrides):
    """Case-study coefficients with a constant alpha = 15 so formulas are easy to check by hand."""
    return InventoryParams(alpha=SignalSpec(kind="constant", base=15.0), **overrides)


def _fbs(n_steps=200, **overrides):
    base = dict(grid=make_grid(0.0, 1.0, n_steps), max_iterations=60)
    base.update(overrides)
    return FbsConfig(**base)


# --- pricing and dynamics ---

@pytest.mark.parametrize("p, expected", [(4.0, 5.0), (10.0, 0.0), (6.0, 0.0)])
def test_demand(p, expected):
    assert inventory_app.demand(15.0, 2.5, p) == pytest.approx(expected)


def test_price_from_rate():
    assert inventory_app.price_from_rate(2.0, 15.0, 2.5, 0.6) == pytest.approx(4.2)
    assert inventory_app.price_from_rate(0.0, 15.0, 2.5, 0.6) == pytest.approx(3.0)


@pytest.mark.parametrize("u, expected", [(3.0, 0.0), (0.0, -7.5), (5.0, 5.0)])
def test_reduced_dynamics(u, expected):
    assert inventory_app.reduced_rhs(_flat(), 0.0, 0.0, u) == pytest.approx(expected)


def test_rate_bound_and_gamma():
    params = _flat()
    assert inventory_app.rate_bound(params, 0.3) == pytest.approx(5.0)
    assert inventory_app.gamma_factor(params, 0.3) == pytest.approx(2.5)


def test_rewards():
    params = _flat()
    assert inventory_app.running_reward(params, 0.0, 0.0) == pytest.approx(22.5)
    assert inventory_app.running_reward(params, 0.0, -1.0) == pytest.approx(-17.5)
    assert inventory_app.running_reward(params, 0.0, 1.0) == pytest.approx(19.5)
    assert inventory_app.terminal_reward(params, -0.5) == pytest.approx(-102.5)
    assert inventory_app.production_cost(params, 0.0, 2.0) == pytest.approx(0.6 * 4.0 * 2.5)


# --- costates ---

def test_costate_off_band():
    params = _flat(sigma=5.0)
    assert inventory_app.costate_rhs(params, 0.0, 1.0, 1.5, 0.0, -5.0, 3.0) == pytest.approx((6.0, 0.0))
    assert inventory_app.costate_rhs(params, 0.0, -1.0, -0.5, 0.0, -5.0, 3.0) == pytest.approx((-80.0, 0.0))


def test_costate_on_band_picks_up_smoothing_slope():
    params = _flat(sigma=5.0)
    # x_dot = 3.8 * 2.5 - 7.5 = 2, x - y = -0.005, psi' = 100
    d_x, d_y = inventory_app.costate_rhs(params, 0.0, 1.0, 1.005, 0.0, -5.0, 3.8)
    assert d_x == pytest.approx(6.0 + 1000.0)
    assert d_y == pytest.approx(-1000.0)


def test_gradient_consistent_costate_ignores_falling_level():
    params = _flat(sigma=5.0)
    # x_dot = -7.5 on the band
    literal = inventory_app.costate_rhs(params, 0.0, 1.0, 1.005, 0.0, -5.0, 0.0)
    consistent = inventory_app.costate_rhs(params, 0.0, 1.0, 1.005, 0.0, -5.0, 0.0, "gradient_consistent")
    assert literal[1] == pytest.approx(-5.0 * 100.0 * -7.5)
    assert consistent == pytest.approx((6.0, 0.0))


def test_indicator_costate_has_no_band_term():
    params = _flat(sigma=5.0)
    assert inventory_app.costate_rhs_indicator(params, 0.0, 1.0, 1.005, 0.0, -5.0, 3.8) == (6.0, 0.0)


@pytest.mark.parametrize("mode, expected", [("paper_literal", 41.0), ("gradient_consistent", 82.0)])
def test_terminal_costates(mode, expected):
    params = _flat(sigma=2.0)
    lam_x, lam_y = inventory_app.costate_terminal(params, -0.1, 0.0, mode)
    assert lam_x == pytest.approx(expected)
    assert lam_y == -2.0
    assert inventory_app.costate_terminal(params, 0.0, 0.0, mode)[0] == 0.0


# --- control update ---

def test_control_update_off_band_is_clamped_stationary_point():
    params = _flat()
    assert inventory_app.control_update(params, 0.0, 1.0, 2.0, 3.0, -5.0) == pytest.approx(2.5)
    assert inventory_app.control_update(params, 0.0, 1.0, 2.0, 100.0, 0.0) == pytest.approx(5.0)
    assert inventory_app.control_update(params, 0.0, 1.0, 2.0, -3.0, 0.0) == 0.0


def test_control_update_with_zero_costates_stops_production():
    assert inventory_app.control_update(_flat(), 0.0, 0.0, 0.0, 0.0, 0.0) == 0.0


def test_control_update_on_max_surface_settles_at_breakpoint():
    # rising-side optimum (6 - 5) / 1.2 lies left of u_b = 3 and falling-side optimum 5 lies right
    assert inventory_app.control_update(_flat(sigma=5.0), 0.0, 0.0, 0.0, 6.0, -5.0) == pytest.approx(3.0)


def test_control_update_matches_grid_maximizer():
    rng = np.random.default_rng(11)
    for case in range(200):
        params = InventoryParams(sigma=float(rng.uniform(0.0, 10.0)))
        problem = inventory_app.build_problem(params)
        H = inventory_app.solver_hamiltonian(params)
        grid_update = make_grid_control_update(problem, H)
        t = float(rng.uniform(0.0, 1.0))
        y = float(rng.uniform(-0.5, 0.5))
        x = y + float(rng.choice([-0.5, -0.008, -0.002, 0.0, 0.01]))
        lam_x = float(rng.uniform(-10.0, 20.0))
        lam_y = -params.sigma
        mine = inventory_app.control_update(params, t, x, y, lam_x, lam_y)
        ref = grid_update(t, np.array([x]), y, np.array([lam_x]), lam_y)
        h_mine = H(t, x, y, mine, lam_x, lam_y)
        h_ref = H(t, x, y, ref, lam_x, lam_y)
        assert h_mine >= h_ref - 1e-9 * (1.0 + abs(h_ref)), f"case {case}"
        assert 0.0 <= mine <= inventory_app.rate_bound(params, t)


def test_indicator_update_uses_hard_switch():
    params = _flat(sigma=5.0)
    below = inventory_app.control_update(params, 0.0, -0.005, 0.0, 6.0, -5.0, indicator=True)
    above = inventory_app.control_update(params, 0.0, 0.0, 0.0, 6.0, -5.0, indicator=True)
    assert below == pytest.approx(5.0)
    assert above == pytest.approx(3.0)


# --- reports ---

def test_structural_checks_on_flat_trajectory_are_vacuous():
    grid = make_grid(0.0, 1.0, 10)
    zeros = np.zeros((grid.n_nodes, 1))
    solution = SimpleNamespace(control=Trajectory(grid, zeros), x=zeros, y=zeros[:, 0], u=zeros)
    report = inventory_app.structural_checks(solution, _flat())
    assert report["local_monotonicity_fraction"] == 1.0
    assert report["monotonicity_empty"] is True
    assert report["terminal_shortage_ok"] is True


def test_price_and_bounds_along_a_solve():
    params = InventoryParams()
    solution, report = inventory_app.solve_case(params, _fbs())
    assert report["bounds"] == {
        "control_in_box": True, "price_in_box": True, "demand_nonnegative": True,
    }
    assert report["revenue"] == pytest.approx(
        solution.breakdown.integral_term + solution.breakdown.terminal_term
    )
    p = inventory_app.price_path(params, solution)
    assert p.shape == (201,)
    assert p[0] == pytest.approx(0.6 * solution.u[0, 0] + params.alpha.value(0.0) / 5.0)


def test_revenue_bound_on_flat_instance():
    # 22.5 - k C B^2 / (k + C) with B = int alpha / 2 = 7.5 and C = C_s_T; on 50 steps
    # sum_k G_k^2 / (w_k gamma) = gamma dt (N + 1), so k = a / (2.5 * 51 / 50)
    grid = make_grid(0.0, 1.0, 50)
    k, C, B = 0.6 / (2.5 * 51.0 / 50.0), 410.0, 7.5
    expected = 22.5 - k * C * B * B / (k + C)
    assert inventory_app.revenue_upper_bound(_flat(), grid) == pytest.approx(expected, rel=1e-9)


def test_solved_revenue_stays_under_the_bound():
    _, report = inventory_app.solve_case(InventoryParams(), _fbs(n_steps=100, max_iterations=40))
    assert report["revenue"] <= report["revenue_bound"] + 1e-3 * abs(report["revenue_bound"])


# --- grid-bound forms ---

def _random_nodes(grid, rng, sigma):
    n = grid.n_nodes
    y = rng.uniform(-0.5, 0.5, n)
    x = (y + rng.choice([-0.5, -0.008, -0.002, 0.0, 0.01], n)).reshape(-1, 1)
    lam_x = rng.uniform(-10.0, 20.0, n).reshape(-1, 1)
    return x, y, lam_x, np.full(n, -sigma)


@pytest.mark.parametrize("indicator", [False, True])
def test_node_updates_match_pointwise_update(indicator):
    params = InventoryParams(sigma=4.0)
    grid = make_grid(0.0, 1.0, 64)
    x, y, lam_x, lam_y = _random_nodes(grid, np.random.default_rng(5), params.sigma)
    batch = inventory_app._node_updates(params, indicator, grid)(x, y, lam_x, lam_y)
    single = [
        inventory_app.control_update(params, t, x[k, 0], y[k], lam_x[k, 0], lam_y[k], indicator)
        for k, t in enumerate(grid.nodes)
    ]
    assert batch == pytest.approx(single, abs=1e-12)


@pytest.mark.parametrize("mode", ["paper_literal", "gradient_consistent"])
def test_staged_costates_match_pointwise(mode):
    params = InventoryParams(sigma=3.0)
    grid = make_grid(0.0, 1.0, 20)
    rhs = inventory_app._staged_costates(params, mode, grid)
    for j, t in enumerate(grid.stage_times):
        row = np.array([0.3 - 0.05 * j, 0.32 - 0.05 * j, 2.0 + 0.1 * j])
        lam = np.array([1.5, -3.0])
        d_x, d_y = inventory_app.costate_rhs(params, t, row[0], row[1], lam[0], lam[1], row[2], mode)
        assert rhs(j, lam, row) == pytest.approx([d_x, d_y], rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("dynamics", ["smooth", "indicator"])
def test_grid_model_evaluates_like_the_pointwise_callbacks(dynamics):
    params = InventoryParams(sigma=2.0)
    problem = inventory_app.build_problem(params)
    pointwise = replace(problem, on_grid=None)
    grid = make_grid(0.0, 1.0, 80)
    control = Trajectory(grid, 0.5 * problem.control_bounds_on(grid)[1])
    states, bd = evaluate(problem, grid, control, dynamics)
    ref_states, ref_bd = evaluate(pointwise, grid, control, dynamics)
    assert states.values == pytest.approx(ref_states.values, abs=1e-11)
    assert bd.total_exact == pytest.approx(ref_bd.total_exact, abs=1e-9)


@pytest.mark.parametrize("mode", ["paper_literal", "gradient_consistent"])
def test_solve_imposes_terminal_costates(mode):
    params = InventoryParams(sigma=2.0)
    solution, _ = inventory_app.solve_case(params, _fbs(n_steps=100, max_iterations=20, costate_terminal_mode=mode))
    x_T = solution.x[-1, 0]
    lam_x, lam_y = inventory_app.costate_terminal(params, x_T, solution.y[-1], mode)
    assert solution.costates.values[-1, 0] == lam_x
    assert solution.costates.values[-1, 1] == lam_y == -2.0


def test_adjoint_gradient_off_band():
    params = InventoryParams(sigma=5.0)
    problem = inventory_app.build_problem(params)
    costate_rhs, costate_terminal, _ = inventory_app.callbacks(params, "gradient_consistent")
    grid = make_grid(0.0, 1.0, 400)
    lower, upper = problem.control_bounds_on(grid)
    control = Trajectory(grid, 0.5 * (lower + upper))
    err = adjoint_gradient_check(
        problem, costate_rhs, costate_terminal, inventory_app.solver_hamiltonian(params),
        control, nodes=range(20, 400, 38),
    )
    assert err < 1e-2


# --- sweeps ---

def test_duplicate_sigma_rows_are_identical():
    frame = inventory_app.sweep_sigma(InventoryParams(), [0.0, 0.0], _fbs(n_steps=60, max_iterations=30))
    assert len(frame) == 2
    assert frame.iloc[0].equals(frame.iloc[1])


def test_sweep_rejects_negative_sigma():
    with pytest.raises(ValueError):
        inventory_app.sweep_sigma(InventoryParams(), [1.0, -1.0], _fbs(n_steps=10))


def test_failed_sweep_row_is_marked(monkeypatch):
    def boom(params, fbs_config, maximality_probes=0):
        raise RuntimeError("diverged")

    monkeypatch.setattr(inventory_app, "solve_case", boom)
    frame = inventory_app.sweep_sigma(InventoryParams(), [2.0], _fbs(n_steps=10))
    assert frame.loc[0, "status"] == "failed"
    assert "diverged" in frame.loc[0, "error"]


def test_dn_compare_pairs_rows_at_matched_peaks():
    fbs = _fbs(n_steps=60, max_iterations=20)
    table = inventory_app.dn_compare(InventoryParams(), [0.0, 5.0], fbs, fbs)
    assert list(table["sigma"]) == [0.0, 5.0]
    assert (table["status"] == "ok").all()
    for column in ("dn_J", "dn_y_T", "matched_smooth_sigma", "revenue_gap_at_matched_peak"):
        assert column in table.columns
    assert set(table["matched_smooth_sigma"]) <= {0.0, 5.0}
