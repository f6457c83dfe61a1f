"""Command-line entry: load a JSON run config, run it, write CSV/JSON outputs.

Exit codes: 0 success (including non-convergence, flagged in summary.json),
2 non-finite state during a solve, 3 invalid configuration.
"""
import argparse
import json
import logging
import sys
import time

from pydantic import ValidationError

from config import CONFIG
import database
from grid_ode import NonFiniteStateError
from models import InventoryParams, QueueParams, RunConfig
import services

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NON_FINITE = 2
EXIT_INVALID = 3

SUBCOMMAND_KINDS = {
    "solve": "solve",
    "sweep": "sweep_sigma",
    "pareto": "pareto",
    "oracle-compare": "oracle_compare",
    "dn-compare": "dn_compare",
    "match-utilization": "match_utilization",
}


class ConfigError(ValueError):
    pass


def configure_logging():
    logging.basicConfig(
        level=getattr(logging, CONFIG.LOG_LEVEL, logging.INFO),
        format='%(asctime)s - %(name)s:%(lineno)d - %(levelname)s - %(message)s',
        stream=sys.stdout,
    )
    logging.getLogger("sqlalchemy.engine").setLevel(logging.WARNING)


def _describe(err: ValidationError):
    parts = []
    for item in err.errors():
        where = ".".join(str(p) for p in item.get("loc", ())) or "<root>"
        parts.append(f"{where}: {item.get('msg')}")
    return "; ".join(parts)


def validate_config(data, overrides=None):
    """RunConfig from a dict, raising ConfigError with field paths on failure."""
    data = dict(data)
    data.update(overrides or {})
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {_describe(e)}") from e
    except ValueError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e


def load_config(path, overrides=None):
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: JSON syntax error at line {e.lineno}, column {e.colno}: {e.msg}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return validate_config(data, overrides)


def run(config: RunConfig, config_path=None, workers=None):
    """Execute one run and record it in the run history; returns the exit code."""
    started = time.monotonic()
    status, code, error, summary = "success", EXIT_OK, None, {}
    try:
        summary = services.run_service(config, workers)
    except NonFiniteStateError as e:
        status, code, error = "non_finite", EXIT_NON_FINITE, e
        logger.error(f"Run aborted: {e}")
    except (ConfigError, ValidationError, ValueError) as e:
        status, code, error = "invalid", EXIT_INVALID, e
        logger.error(f"Run rejected: {e}")

    database.log_run_attempt(
        run_kind=config.run_kind,
        status=status,
        exit_code=code,
        application=config.application,
        config_path=config_path,
        output_dir=config.output_dir,
        converged=summary.get("converged"),
        objective=summary.get("objective"),
        peak=summary.get("peak"),
        duration_seconds=round(time.monotonic() - started, 3),
        error=error,
    )
    return code


def default_configs():
    """Every default, per application, in config-file form."""
    return {
        "inventory": RunConfig(application="inventory", params=InventoryParams()).echo(),
        "queue": RunConfig(application="queue", params=QueueParams()).echo(),
        "environment": CONFIG.model_dump(),
    }


def build_parser():
    parser = argparse.ArgumentParser(
        prog="peakctl",
        description="Optimal control with running-maximum (peak) penalties: "
                    "forward-backward sweep solves, sweeps and oracle checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMAND_KINDS:
        p = sub.add_parser(name, help=f"run kind '{SUBCOMMAND_KINDS[name]}'")
        p.add_argument("--config", required=True, help="path to a JSON run config")
        p.add_argument("--out", default=None, help="output directory (overrides output_dir)")
        p.add_argument("--threads", type=int, default=None,
                       help="worker processes for sweeps (default: WORKERS or hardware threads)")
        p.add_argument("--seed", type=int, default=None,
                       help="reserved; every run is deterministic")
    sub.add_parser("print-defaults", help="print every default setting as JSON")
    history = sub.add_parser("history", help="show recent runs from the run history")
    history.add_argument("--limit", type=int, default=20)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging()

    if args.command == "print-defaults":
        print(json.dumps(default_configs(), indent=2))
        return EXIT_OK

    database.init_db()

    if args.command == "history":
        ok, status = database.check_db_connection()
        if not ok:
            logger.warning(f"Run history unavailable ({status}); nothing to show")
        for row in database.get_recent_runs(args.limit):
            print(json.dumps(row))
        return EXIT_OK

    overrides = {"run_kind": SUBCOMMAND_KINDS[args.command]}
    if args.out:
        overrides["output_dir"] = args.out
    try:
        config = load_config(args.config, overrides)
    except ConfigError as e:
        logger.error(str(e))
        database.log_run_attempt(
            run_kind=overrides["run_kind"], status="invalid", exit_code=EXIT_INVALID,
            config_path=args.config, error=e,
        )
        return EXIT_INVALID
    return run(config, config_path=args.config, workers=args.threads)


if __name__ == "__main__":
    sys.exit(main())
