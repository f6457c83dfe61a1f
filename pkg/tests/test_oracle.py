import itertools

import numpy as np
import pytest

import oracle
from conftest import make_lqr_problem
from grid_ode import Trajectory, make_grid
from oracle import EnumerationTooLargeError, OracleConfig, brute_force, piecewise_control, segment_levels
from problem_core import evaluate


def _config(n_segments, n_levels, n_steps=40, **overrides):
    return OracleConfig(
        eval_grid=make_grid(0.0, 1.0, n_steps), n_segments=n_segments, n_levels=n_levels, **overrides
    )


def test_single_segment_picks_closest_level_to_constant_optimum():
    # constant u = c gives J(c) = -(1 + c + 4 c^2 / 3), best at c = -3/8; levels are -2, 0, 2
    result = brute_force(make_lqr_problem(), _config(1, 3))
    assert result.levels == (1,)
    assert np.all(result.control.values == 0.0)
    assert result.candidates_evaluated == 3


def test_enumeration_guard():
    with pytest.raises(EnumerationTooLargeError):
        brute_force(make_lqr_problem(), _config(8, 10, max_candidates=1000))


@pytest.mark.parametrize("field, value", [("n_levels", 1), ("n_segments", 0)])
def test_config_rejects_degenerate_classes(field, value):
    kwargs = {"n_segments": 2, "n_levels": 3, field: value}
    with pytest.raises(ValueError):
        OracleConfig(eval_grid=make_grid(0.0, 1.0, 10), **kwargs)


def test_best_scores_exactly_what_evaluate_gives():
    problem = make_lqr_problem()
    config = _config(2, 3)
    result = brute_force(problem, config)
    _, bd = evaluate(problem, config.eval_grid, result.control)
    assert bd.total_smoothed == result.breakdown.total_smoothed
    assert bd.peak_exact == result.breakdown.peak_exact


def test_oracle_bounds_every_enumerated_control():
    problem = make_lqr_problem()
    config = _config(2, 3)
    result = brute_force(problem, config)
    levels = segment_levels(problem, config.eval_grid, 2, 3)
    for picked in itertools.product(range(3), repeat=2):
        chosen = [levels[s][i] for s, i in enumerate(picked)]
        control = piecewise_control(problem, config.eval_grid, 2, chosen)
        _, bd = evaluate(problem, config.eval_grid, control)
        assert bd.total_smoothed <= result.breakdown.total_smoothed


def test_more_levels_never_lower_the_best():
    problem = make_lqr_problem()
    coarse = brute_force(problem, _config(2, 3))
    fine = brute_force(problem, _config(2, 5))
    assert fine.breakdown.total_smoothed >= coarse.breakdown.total_smoothed


def test_top_five_are_ranked():
    result = brute_force(make_lqr_problem(), _config(2, 3))
    objectives = [row["objective"] for row in result.top]
    assert [row["rank"] for row in result.top] == [1, 2, 3, 4, 5]
    assert objectives == sorted(objectives, reverse=True)
    assert objectives[0] == result.breakdown.total_smoothed


def test_exact_criterion_is_selectable():
    result = brute_force(make_lqr_problem(), _config(1, 3, criterion="total_exact"))
    assert result.top[0]["objective"] == result.breakdown.total_exact


def test_projection_averages_each_segment():
    problem = make_lqr_problem()
    fine = make_grid(0.0, 1.0, 8)
    control = Trajectory(fine, [0.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0, -1.0])
    projected = oracle.project_to_segments(problem, control, make_grid(0.0, 1.0, 4), 2)
    # nodes 0..3 form segment 0, nodes 4..8 segment 1
    assert projected.values[:, 0] == pytest.approx([0.75, 0.75, -1.0, -1.0, -1.0])
