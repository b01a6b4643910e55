"""Command-line front end: ``dktransform run|validate <scenario.json>``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .errors import DKError, ParseError, ValidationError
from .scenario import bundled_scenario_path, load_scenario, run_scenario

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_INVALID = 2
EXIT_INFRA = 3


def _resolve(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    bundled = bundled_scenario_path(p.stem)
    if bundled.exists():
        return bundled
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dktransform", description="Run space-time transformation experiments from scenario files.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="validate and execute a scenario")
    run.add_argument("scenario", help="scenario JSON file, or the name of a bundled scenario")
    run.add_argument("--output-dir", help="directory for CSV and JSON output (overrides the scenario)")
    run.add_argument("--tolerance-scale", type=float, default=1.0, help="multiply every pass threshold")
    run.add_argument("--grid-scale", type=float, default=1.0, help="multiply every grid size n")
    run.add_argument("--seed", type=int, help="override the scenario seed")

    val = sub.add_parser("validate", help="check a scenario without running it")
    val.add_argument("scenario", help="scenario JSON file, or the name of a bundled scenario")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    path = _resolve(args.scenario)
    try:
        sc = load_scenario(path)
    except FileNotFoundError:
        print(f"error: scenario file not found: {args.scenario}", file=sys.stderr)
        return EXIT_INVALID
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValidationError as exc:
        print(f"error: scenario {path} is invalid:", file=sys.stderr)
        for e in exc.errors:
            print(f"  - {e}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: cannot read scenario: {exc}", file=sys.stderr)
        return EXIT_INFRA

    if args.command == "validate":
        print(f"{path}: valid scenario {sc.name!r} with {len(sc.experiments)} experiment(s)")
        return EXIT_PASS

    if args.tolerance_scale <= 0 or args.grid_scale <= 0:
        print("error: --tolerance-scale and --grid-scale must be positive", file=sys.stderr)
        return EXIT_INVALID
    if args.seed is not None:
        sc = replace(sc, seed=args.seed)
    try:
        report = run_scenario(sc, args.output_dir, args.tolerance_scale, args.grid_scale)
    except (OSError, DKError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INFRA
    except Exception as exc:  # noqa: BLE001 - any other failure is infrastructure
        logging.getLogger(__name__).exception("unexpected failure")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INFRA
    print((report.output_dir / f"{sc.name}_report.txt").read_text(encoding="utf-8"), end="")
    print(f"output written to {report.output_dir}")
    return EXIT_PASS if report.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
