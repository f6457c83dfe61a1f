# --- START OF FILE services.py ---
import logging
from datetime import datetime

import pandas as pd

from config import CONFIG
import fbs_solver
import inventory_app
import oracle
import queueing_app
import reporting
from grid_ode import make_grid
from problem_core import evaluate

logger = logging.getLogger(__name__)

MAXIMALITY_PROBES = 101


def _started(kind, config):
    logger.info(f"Service: Starting {kind} run for the {config.application} application.")
    return datetime.now()


def _finish(summary, start_time, config, kind):
    duration = (datetime.now() - start_time).total_seconds()
    logger.info(f"Service: {kind} finished in {duration:.2f} seconds; outputs in {config.output_dir}")
    summary.update({
        "status": "success",
        "run_kind": kind,
        "timestamp": start_time.isoformat(),
        "duration_seconds": round(duration, 2),
    })
    reporting.write_summary(summary, config.output_dir)
    return summary


def _fbs_config(config, **overrides):
    return config.solver.to_fbs_config(config.params.T, **overrides)


def _workers(workers):
    return workers if workers else CONFIG.worker_count()


def solve_service(config, workers=None):
    """Single solve: trajectory.csv plus summary.json."""
    start_time = _started("solve", config)
    params = config.params
    fbs = _fbs_config(config)

    if config.application == "inventory":
        solution, report = inventory_app.solve_case(params, fbs, maximality_probes=MAXIMALITY_PROBES)
        fraction = report.pop("hamiltonian_fraction")
        frame = reporting.trajectory_frame(solution, price=inventory_app.price_path(params, solution))
    else:
        solution, report = queueing_app.solve_queue(params, fbs)
        fraction = fbs_solver.hamiltonian_maximality_report(
            queueing_app.build_problem(params), solution,
            queueing_app.solver_hamiltonian(params), MAXIMALITY_PROBES,
        )
        frame = reporting.trajectory_frame(solution)

    if solution.converged and fraction < 0.99:
        logger.warning(f"Service: Hamiltonian maximality holds at only {fraction:.3f} of nodes")
    reporting.write_frame(frame, config.output_dir, "trajectory.csv")

    summary = {
        "config": config.echo(),
        "solver": fbs.echo(),
        "breakdown": solution.breakdown.model_dump(),
        "diagnostics": dict(solution.diagnostics(), hamiltonian_fraction=fraction),
        "report": report,
        "objective": solution.breakdown.total_smoothed,
        "peak": solution.breakdown.peak_smoothed,
        "converged": solution.converged,
    }
    return _finish(summary, start_time, config, "solve")


def sweep_sigma_service(config, workers=None):
    """sigma sweep: frontier.csv with one row per sigma."""
    start_time = _started("sweep_sigma", config)
    fbs = _fbs_config(config)
    if config.application == "inventory":
        frame = inventory_app.sweep_sigma(config.params, config.sweep_values, fbs, _workers(workers))
    else:
        frame = queueing_app.pareto_sweep(
            config.params, "peak_vs_utilization", config.sweep_values, fbs, _workers(workers)
        ).rename(columns={"weight": "sigma_weight"})
    reporting.write_frame(frame, config.output_dir, "frontier.csv")

    failed = int((frame["status"] != "ok").sum())
    if failed:
        logger.warning(f"Service: {failed} sweep row(s) failed")
    summary = {
        "config": config.echo(),
        "solver": fbs.echo(),
        "rows": reporting.frame_records(frame),
        "failed_rows": failed,
        "converged": bool(frame["converged"].eq(True).all()) if "converged" in frame.columns else False,
    }
    return _finish(summary, start_time, config, "sweep_sigma")


def pareto_service(config, workers=None):
    """Both queue frontiers plus their matched-utilization comparison."""
    start_time = _started("pareto", config)
    fbs = _fbs_config(config)
    n = _workers(workers)
    peak = queueing_app.pareto_sweep(config.params, "peak_vs_utilization", config.sweep_values, fbs, n)
    congestion = queueing_app.pareto_sweep(
        config.params, "congestion_vs_utilization", config.congestion_weights, fbs, n
    )
    comparison = queueing_app.pareto_comparison(peak, congestion)

    reporting.write_frame(peak, config.output_dir, "frontier_peak_vs_utilization.csv")
    reporting.write_frame(congestion, config.output_dir, "frontier_congestion_vs_utilization.csv")
    reporting.write_frame(comparison, config.output_dir, "comparison.csv")

    gap = {}
    if not comparison.empty:
        best = comparison.loc[comparison["peak_reduction"].fillna(-float("inf")).idxmax()]
        gap = {
            "max_peak_reduction": float(best["peak_reduction"]),
            "congestion_degradation_at_max": float(best["congestion_degradation"]),
            "matched_integral_h": float(best["integral_h_peak"]),
            "sigma": float(best["sigma"]),
            "rho": float(best["rho"]),
        }
        logger.info(
            f"Service: Peak frontier lowers y(T) by up to {100 * gap['max_peak_reduction']:.1f}% "
            f"at matched utilization"
        )
    summary = {
        "config": config.echo(),
        "solver": fbs.echo(),
        "matched_utilization_gap": gap,
        "comparison": reporting.frame_records(comparison),
    }
    return _finish(summary, start_time, config, "pareto")


def _app(config):
    return inventory_app if config.application == "inventory" else queueing_app


def oracle_compare_service(config, workers=None):
    """FBS projected onto piecewise-constant controls against exhaustive search."""
    start_time = _started("oracle_compare", config)
    params = config.params
    app = _app(config)
    problem = app.build_problem(params)
    fbs = _fbs_config(config)
    if config.application == "inventory":
        solution, _ = inventory_app.solve_case(params, fbs)
    else:
        solution, _ = queueing_app.solve_queue(params, fbs)

    settings = config.oracle
    eval_grid = make_grid(0.0, params.T, settings.n_steps)
    oracle_config = oracle.OracleConfig(
        eval_grid=eval_grid,
        n_segments=settings.n_segments,
        n_levels=settings.n_levels,
        criterion=settings.criterion,
    )
    result = oracle.brute_force(problem, oracle_config)
    projected = oracle.project_to_segments(problem, solution.control, eval_grid, settings.n_segments)
    _, projected_bd = evaluate(problem, eval_grid, projected)

    best = getattr(result.breakdown, settings.criterion)
    mine = getattr(projected_bd, settings.criterion)
    relative_gap = (best - mine) / abs(best) if best else 0.0
    logger.info(f"Service: Oracle best {best:.6f}, projected FBS {mine:.6f}, gap {100 * relative_gap:.2f}%")

    reporting.write_frame(pd.DataFrame(result.top), config.output_dir, "oracle_top5.csv")
    summary = {
        "config": config.echo(),
        "solver": fbs.echo(),
        "oracle": {
            "best": result.breakdown.model_dump(),
            "levels": result.top[0]["levels"] if result.top else [],
            "candidates_evaluated": result.candidates_evaluated,
        },
        "projected_fbs": projected_bd.model_dump(),
        "fbs": solution.breakdown.model_dump(),
        "relative_gap": relative_gap,
        "objective": mine,
        "peak": projected_bd.peak_smoothed,
        "converged": solution.converged,
    }
    return _finish(summary, start_time, config, "oracle_compare")


def dn_compare_service(config, workers=None):
    """Smooth vs indicator-dynamics solutions for every sigma in sweep_values."""
    start_time = _started("dn_compare", config)
    fbs = _fbs_config(config)
    dn = _fbs_config(config, max_iterations=config.solver.dn_max_iterations)
    table = inventory_app.dn_compare(config.params, config.sweep_values, fbs, dn, _workers(workers))
    reporting.write_frame(table, config.output_dir, "dn_compare.csv")
    summary = {
        "config": config.echo(),
        "solver": fbs.echo(),
        "dn_solver": dn.echo(),
        "rows": reporting.frame_records(table),
    }
    return _finish(summary, start_time, config, "dn_compare")


def match_utilization_service(config, workers=None):
    """Rebalance beta until int h hits the target, then write that solution."""
    start_time = _started("match_utilization", config)
    fbs = _fbs_config(config)
    params, solution, report, history = queueing_app.match_utilization(
        config.params, config.target_utilization, fbs
    )
    reporting.write_frame(history, config.output_dir, "utilization_search.csv")
    reporting.write_frame(reporting.trajectory_frame(solution), config.output_dir, "trajectory.csv")
    summary = {
        "config": config.echo(),
        "solver": fbs.echo(),
        "matched_params": params.model_dump(mode="json"),
        "breakdown": solution.breakdown.model_dump(),
        "diagnostics": solution.diagnostics(),
        "report": report,
        "objective": solution.breakdown.total_smoothed,
        "peak": solution.breakdown.peak_smoothed,
        "converged": solution.converged,
    }
    return _finish(summary, start_time, config, "match_utilization")


SERVICES = {
    "solve": solve_service,
    "sweep_sigma": sweep_sigma_service,
    "pareto": pareto_service,
    "oracle_compare": oracle_compare_service,
    "dn_compare": dn_compare_service,
    "match_utilization": match_utilization_service,
}


def run_service(config, workers=None):
    return SERVICES[config.run_kind](config, workers)

# --- END OF FILE services.py ---
