"""
Command-line entry point for dpp-forecaster.

Usage:
    dpp-forecaster gen-data --out runs/balanced
    dpp-forecaster train --stage cvae --out runs/balanced
    dpp-forecaster train --stage dsf --out runs/balanced
    dpp-forecaster evaluate --methods dsf cvae --out runs/balanced
    dpp-forecaster export-plots --out runs/balanced

Exit codes: 0 success, 1 usage or configuration error, 2 numerical or
optimization error.
"""

from __future__ import annotations

import argparse
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import NoReturn

from dpp_forecaster.config import get_settings, load_config
from dpp_forecaster.errors import (
    ForecasterError,
    NumericalError,
    OptimizationError,
)
from dpp_forecaster.services.experiment import (
    DEFAULT_METHODS,
    METHODS,
    STAGES,
    cmd_evaluate,
    cmd_export_plots,
    cmd_gen_data,
    cmd_train,
)
from dpp_forecaster.utils.logger import LOG_LEVELS, log_duration, setup_logger

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2


class _ArgumentParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with EXIT_USAGE."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _split_methods(values: Sequence[str]) -> list[str]:
    return [m for value in values for m in value.split(",") if m]


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with its four verbs."""
    runtime = get_settings()

    common = _ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="Experiment configuration (JSON)")
    common.add_argument("--seed", type=int, help="Base seed (overrides the configuration)")
    common.add_argument(
        "--out",
        type=Path,
        help=f"Output directory (default: configuration, else {runtime.OUTPUT_DIR})",
    )
    common.add_argument("--num-samples", type=int, help="Sampling budget N of the DSF")
    common.add_argument(
        "--log-level",
        default=runtime.LOG_LEVEL,
        type=str.upper,
        choices=LOG_LEVELS,
        help="Logging level (default: %(default)s)",
    )
    common.add_argument("--log-file", type=Path, default=runtime.LOG_FILE, help="Also log to this file")

    parser = _ArgumentParser(
        prog="dpp-forecaster",
        description="Diverse trajectory forecasting with a DPP-trained sampling function",
    )
    verbs = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    verbs.add_parser("gen-data", parents=[common], help="Generate train/test crossroad data")

    train = verbs.add_parser("train", parents=[common], help="Train one model stage")
    train.add_argument("--stage", required=True, choices=STAGES, help="Stage to train")

    evaluate = verbs.add_parser("evaluate", parents=[common], help="Evaluate methods on the test split")
    evaluate.add_argument(
        "--methods",
        nargs="+",
        default=list(DEFAULT_METHODS),
        help=f"Methods, space or comma separated ({', '.join(METHODS)})",
    )
    evaluate.add_argument("--omega-test", type=float, help="Test-time base quality for dsf-map")

    verbs.add_parser("export-plots", parents=[common], help="Export plot data")
    return parser


def run(args: argparse.Namespace) -> int:
    """
    Execute a parsed command.

    Returns:
        Exit code
    """
    config = load_config(args.config)
    out = args.out
    if out is None and args.config is None:
        out = get_settings().OUTPUT_DIR
    config = config.with_overrides(
        seed=args.seed,
        output_dir=out,
        num_samples=args.num_samples,
        omega_test=getattr(args, "omega_test", None),
    )

    if args.command == "gen-data":
        files = cmd_gen_data(config)
    elif args.command == "train":
        files = cmd_train(config, args.stage)
    elif args.command == "evaluate":
        files = [cmd_evaluate(config, _split_methods(args.methods))]
    else:
        files = cmd_export_plots(config)

    for path in files:
        print(path)
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point for the dpp-forecaster command."""
    args = build_parser().parse_args(argv)
    try:
        logger = setup_logger("dpp_forecaster", args.log_level, args.log_file)
    except (ValueError, OSError) as e:
        print(f"dpp-forecaster: error: {e}", file=sys.stderr)
        return EXIT_USAGE

    try:
        with log_duration(logger, args.command):
            return run(args)
    except (OptimizationError, NumericalError) as e:
        logger.error("Numerical failure: %s", e)
        return EXIT_NUMERICAL
    except ForecasterError as e:
        logger.error("%s", e)
        return EXIT_USAGE
    except OSError as e:
        logger.error("I/O failure: %s", e)
        return EXIT_USAGE
    except KeyboardInterrupt:
        logger.warning("Interrupted")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
