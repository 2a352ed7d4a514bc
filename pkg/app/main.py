from __future__ import annotations

import argparse
import sys
from typing import Sequence
from uuid import uuid4

from app.core.config import settings
from app.core.errors import EXIT_OK
from app.core.exception_handlers import run_with_error_boundary
from app.core.logging import bind_context, clear_context, configure_logging, get_logger
from app.services.config_service import load_experiment_config
from app.services.experiment_pipeline import cmd_simulate, cmd_track
from app.services.report_service import cmd_report

logger = get_logger(__name__)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML or JSON experiment config")
    parser.add_argument("--seed", type=int, help="global seed (overrides config)")
    parser.add_argument("--out", help="output directory (overrides config)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=settings.PROJECT_NAME,
        description="Track neural tuning changes and decode kinematics from spike trains.",
    )
    parser.add_argument("--version", action="version", version=settings.VERSION)
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="generate a synthetic MC->BC dataset")
    _add_common(simulate)

    track = sub.add_parser("track", help="run tracking, decoding and evaluation on a dataset")
    track.add_argument("--dataset", help="dataset directory (overrides scenario.dataset_path)")
    track.add_argument("--method", choices=["gapp", "dsmcpp", "both"])
    _add_common(track)

    report = sub.add_parser("report", help="tabulate experiment records")
    report.add_argument("records", nargs="*", help="record.json files")
    report.add_argument("--out", help="write the table as CSV")
    return parser


def _dispatch(args: argparse.Namespace, run_id: str) -> int:
    if args.command == "report":
        cmd_report(args.records, args.out)
        return EXIT_OK

    cfg = load_experiment_config(
        args.config,
        seed=args.seed,
        output_dir=args.out,
        method=getattr(args, "method", None),
    )
    if args.command == "simulate":
        cmd_simulate(cfg)
    else:
        cmd_track(cfg, args.dataset, run_id=run_id)
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    run_id = uuid4().hex
    clear_context()
    bind_context(run_id=run_id, command=args.command)
    logger.info("command_started", environment=settings.ENVIRONMENT)
    try:
        return run_with_error_boundary(
            lambda: _dispatch(args, run_id), run_id=run_id, command=args.command
        )
    finally:
        clear_context()


if __name__ == "__main__":
    sys.exit(main())
