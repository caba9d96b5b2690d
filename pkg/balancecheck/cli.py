"""Command line entry point: run, suite, converge, constants."""

import argparse
import logging
import sys
from pathlib import Path

import pandas as pd

from balancecheck.common import BalanceCheckError, ConfigError
from balancecheck.constants import DEFAULT_PLATEAU_RADIUS, constants_table
from balancecheck.estimates import Tolerance
from balancecheck.harness import (
    EXIT_CONFIG,
    EXIT_FAILED,
    EXIT_OK,
    Settings,
    check_resolution_scale,
    convergence_report,
    load_scenario,
    load_settings,
    run_scenario,
    run_suite,
)

logger = logging.getLogger("balancecheck")

DEFAULT_SETTINGS = Path("balancecheck.yaml")


def _configure_logging(level: str):
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _add_common(parser: argparse.ArgumentParser, jobs: bool = False):
    parser.add_argument("--out", type=Path, help="Output directory (default from settings)")
    parser.add_argument("--resolution-scale", type=float, help="Fine resolution is cells / scale, scale in (0, 1)")
    parser.add_argument("--tolerance-rel", type=float, help="Relative verdict tolerance")
    parser.add_argument("--tolerance-abs", type=float, help="Absolute verdict tolerance (default 4h·scale)")
    if jobs:
        parser.add_argument("--jobs", type=int, help="Scenarios run in parallel")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="balancecheck", description="Check TV and L1 stability estimates for scalar balance laws")
    parser.add_argument("--settings", type=Path, default=DEFAULT_SETTINGS, help="Suite defaults (YAML)")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run one scenario file")
    run.add_argument("--config", type=Path, required=True, help="Scenario file")
    _add_common(run)

    suite = commands.add_parser("suite", help="Run every scenario under a directory")
    suite.add_argument("--config", type=Path, help="Scenario directory (default from settings)")
    _add_common(suite, jobs=True)

    converge = commands.add_parser("converge", help="Error and margin table over dyadic resolutions")
    converge.add_argument("--config", type=Path, required=True, help="Scenario file")
    converge.add_argument("--resolutions", type=int, nargs="+", required=True, help="Cell counts, at least 3, dyadic")
    _add_common(converge)

    constants = commands.add_parser("constants", help="Print the W_N, ω_N, C₁, M₁ table")
    constants.add_argument("--max-dimension", type=int, default=6)
    constants.add_argument("--plateau-radius", type=float, default=DEFAULT_PLATEAU_RADIUS)
    constants.add_argument("--out", type=Path, help="Also write the table as CSV")
    return parser


def _tolerance(args: argparse.Namespace, settings: Settings) -> Tolerance | None:
    rel = args.tolerance_rel if args.tolerance_rel is not None else settings.tolerance_rel
    abs_tol = args.tolerance_abs if args.tolerance_abs is not None else settings.tolerance_abs
    if rel is None and abs_tol is None:
        return None
    return Tolerance(rel=rel if rel is not None else Tolerance().rel, abs=abs_tol)


def _scale(args: argparse.Namespace, settings: Settings) -> float:
    return check_resolution_scale(args.resolution_scale if args.resolution_scale is not None else settings.resolution_scale)


def _constants(args: argparse.Namespace) -> int:
    frame = pd.DataFrame(constants_table(args.max_dimension, args.plateau_radius))
    print(frame.to_string(index=False, float_format=lambda v: f"{v:.12g}"))
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(args.out, index=False, float_format="%.17g")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.log_level)

    if args.command == "constants":
        return _constants(args)

    try:
        settings = load_settings(args.settings)
        out = args.out if args.out is not None else settings.out
        scale = _scale(args, settings)
        tolerance = _tolerance(args, settings)

        if args.command == "run":
            result = run_scenario(args.config, out, scale, tolerance)
            if result.error:
                print(f"{result.name}: {result.error}", file=sys.stderr)
            return result.exit_code

        if args.command == "suite":
            jobs = args.jobs if args.jobs is not None else settings.jobs
            suite = run_suite(args.config or settings.scenarios, out, jobs, scale, tolerance)
            for failure in suite.failures:
                print(f"{failure.name}: {failure.error}", file=sys.stderr)
            return suite.exit_code

        frame = convergence_report(load_scenario(args.config), args.resolutions, out, tolerance)
        print(frame.to_string(index=False))
        return EXIT_OK
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except BalanceCheckError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
