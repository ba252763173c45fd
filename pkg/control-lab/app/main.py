"""Command-line entry point: run, sweep, compare-estimators, check."""

import argparse
import os
import sys
from pathlib import Path

_APP_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, _APP_ROOT)
sys.path.insert(0, os.path.dirname(_APP_ROOT))

import yaml  # noqa: E402
from pydantic import ValidationError  # noqa: E402

from shared.logging_config import configure_logging, get_logger  # noqa: E402
from shared.prometheus import record_error, register_error_metrics, write_metrics_textfile  # noqa: E402
from app import checks, service  # noqa: E402
from app.config import get_settings  # noqa: E402
from app.errors import LabError  # noqa: E402
from app.metrics import register_lab_metrics  # noqa: E402
from app.schemas import ExperimentConfig, load_config  # noqa: E402

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4
EXIT_CHECK_FAILED = 5
EXIT_ALL_DIVERGED = 6

CATEGORY_EXIT_CODES = {
    "config": EXIT_CONFIG,
    "numerical": EXIT_NUMERICAL,
    "io": EXIT_IO,
    "check_failed": EXIT_CHECK_FAILED,
    "all_diverged": EXIT_ALL_DIVERGED,
}


class CommandFailed(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="control-lab",
        description="LQR with real-time residual learning: batch experiments and diagnostics",
    )
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ERROR (default: LAB_LOG_LEVEL)")
    parser.add_argument("--metrics-file", default=None, help="Write Prometheus metrics to this textfile on exit")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("run", "Run one experiment config over its seeds"),
        ("sweep", "Run every truth model x controller pair of the config"),
        ("compare-estimators", "Offline SN-DNN / DNN / GP estimators inside the controller"),
        ("check", "Lipschitz audit, contraction check and error-ball report"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="YAML experiment config")
        cmd.add_argument("--out", default=None, help="Output directory (default: config 'output')")
        cmd.add_argument("--seeds", type=int, default=None, help="Use seeds 0..n-1 instead of the config list")
        cmd.add_argument("--parallel", type=int, default=None, help="Worker processes for trials")
    return parser


def resolve_config(args) -> ExperimentConfig:
    if not Path(args.config).is_file():
        raise CommandFailed("config", f"config file not found: {args.config}")
    cfg = load_config(args.config)
    if args.seeds is not None:
        if args.seeds < 1:
            raise ValueError("--seeds must be >= 1")
        cfg = cfg.override({"seeds": list(range(args.seeds))})
    return cfg


def _all_diverged(logs) -> bool:
    return bool(logs) and all(log.diverged for log in logs)


def execute(args, settings) -> int:
    cfg = resolve_config(args)
    out_dir = args.out or settings.output_dir or cfg.output
    parallel = args.parallel or settings.parallel
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    logger.info("command_started", command=args.command, config=args.config, out=out_dir, seeds=len(cfg.seeds))

    if args.command == "run":
        logs, rows = service.run_and_write(cfg, out_dir, parallel=parallel)
        for row in rows:
            logger.info("trial_summary", **row)
        if _all_diverged(logs):
            raise CommandFailed("all_diverged", f"all {len(logs)} trials diverged")
    elif args.command == "sweep":
        rows = service.sweep(cfg, out_dir, parallel=parallel)
        if rows and all(row["diverged"] for row in rows):
            raise CommandFailed("all_diverged", "every sweep trial diverged")
    elif args.command == "compare-estimators":
        for report in service.compare_estimators(cfg, out_dir, parallel=parallel):
            logger.info("estimator_summary", **report.model_dump())
    elif args.command == "check":
        results = checks.run_checks(cfg)
        failed = [r.name for r in results if r.failed]
        if failed:
            raise CommandFailed("check_failed", f"checks failed: {', '.join(failed)}")
    return EXIT_OK


def _category(e: Exception) -> str:
    if isinstance(e, CommandFailed):
        return e.category
    if isinstance(e, (ValidationError, yaml.YAMLError)):
        return "config"
    if isinstance(e, LabError):
        return e.category
    if isinstance(e, OSError):
        return "io"
    if isinstance(e, (ArithmeticError, RuntimeError)):
        return "numerical"
    return "config"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    settings = get_settings()
    configure_logging(component="control-lab", log_level=args.log_level or settings.log_level)
    register_error_metrics()
    register_lab_metrics()

    try:
        code = execute(args, settings)
    except (CommandFailed, LabError, ValidationError, yaml.YAMLError, OSError, ValueError, ArithmeticError, RuntimeError) as e:
        category = _category(e)
        code = CATEGORY_EXIT_CODES[category]
        record_error(args.command, category)
        logger.error(
            "command_failed",
            command=args.command,
            category=category,
            error=str(e),
            error_type=type(e).__name__,
            exc_info=True,
        )

    metrics_file = args.metrics_file or settings.metrics_file
    if metrics_file:
        write_metrics_textfile(metrics_file)
    logger.info("command_finished", command=args.command, exit_code=code)
    return code


if __name__ == "__main__":
    sys.exit(main())
