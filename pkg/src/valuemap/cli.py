"""Command-line entry point.

Usage::

    valuemap validate [--catalog PATH]
    valuemap simulate [--backend replay --model gpt-4 --entities Nigeria,Japan]
    valuemap encode | index | compare --benchmark CSV | render [--geometry GEOJSON]
    valuemap run-all --benchmark CSV --geometry GEOJSON

Exit codes: 0 success, 1 validation/data error, 2 I/O error, 3 backend error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__
from .catalog import load_catalog, validate_catalog
from .config import load_config
from .errors import BackendError, DataError, IOFailure, ValuemapError
from .pipeline import STAGE_FUNCS, StageFailed, open_run, run_all, simulate

log = logging.getLogger("valuemap")

EXIT_OK, EXIT_DATA, EXIT_IO, EXIT_BACKEND = 0, 1, 2, 3

COMMANDS = ("validate", "simulate", "encode", "index", "compare", "render", "run-all")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--catalog", help="catalog YAML (default: shipped catalog)")
    p.add_argument("--backend", choices=("replay", "http-chat", "scripted"))
    p.add_argument("--model", help="model id sent to the backend and hashed into job ids")
    p.add_argument("--endpoint", help="base URL for the http-chat backend")
    p.add_argument("--fixture", help="replay fixture (JSON lines)")
    p.add_argument("--entities", help="comma-separated entity filter")
    p.add_argument("--benchmark", help="benchmark CSV: entity,trad_sec,surv_self")
    p.add_argument("--geometry", help="GeoJSON for choropleths")
    p.add_argument("--out-dir", dest="out_dir", help="root directory for run folders")
    p.add_argument("--threshold-ranks", dest="threshold_ranks", metavar="A,B",
                   help="ranks averaged for the benchmark threshold (default 3,4)")
    p.add_argument("--parallelism", type=int)
    p.add_argument("--fail-fast", dest="fail_fast", action="store_true", default=None,
                   help="abort the batch on the first failed job")
    p.add_argument("--allow-partial", dest="allow_partial", action="store_true", default=None,
                   help="index entities with missing items")
    p.add_argument("--force", action="store_true", help="rerun stages already marked complete")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="valuemap",
                                     description="Simulated values-survey mapping pipeline")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "validate": "check catalog region and entity counts",
        "simulate": "collect raw responses for every entity x item job",
        "encode": "turn raw responses into numeric item scores",
        "index": "aggregate scores into two-dimensional index points",
        "compare": "regional error metrics against a benchmark",
        "render": "write SVG figures and their data",
        "run-all": "run every stage in order",
    }
    for name in COMMANDS:
        _common(sub.add_parser(name, help=helps[name]))
    return parser


def _flags(args) -> dict:
    keys = ("catalog", "backend", "model", "endpoint", "fixture", "entities", "benchmark",
            "geometry", "out_dir", "threshold_ranks", "parallelism", "fail_fast", "allow_partial")
    return {k: getattr(args, k) for k in keys}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, BackendError):
        return EXIT_BACKEND
    if isinstance(exc, IOFailure):
        return EXIT_IO
    if isinstance(exc, DataError):
        return EXIT_DATA
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_DATA


def cmd_validate(args, out) -> int:
    cfg = load_config(args.config, _flags(args))
    catalog = load_catalog(cfg.catalog, validate=False)
    report = validate_catalog(catalog)
    print(f"entities: {report.total}  polities: {report.polities}", file=out)
    for region, n in report.region_counts.items():
        print(f"  {region:<20} {n:>3}", file=out)
    if report.ok:
        print("catalog ok", file=out)
        return EXIT_OK
    for v in report.violations:
        print(f"violation: {v}", file=out)
    return EXIT_DATA


def _print_manifest(ctx, out):
    print(f"run {ctx.run_id} -> {ctx.run_dir}", file=out)
    stages = ctx.manifest.get("stages", {})
    for name in STAGE_FUNCS:
        entry = stages.get(name)
        state = "complete" if entry and entry.get("complete") else "pending"
        print(f"  {name:<9} {state}", file=out)


def main(argv=None, out=None, backend=None) -> int:
    """Run the CLI; ``backend`` injects a prebuilt backend for simulate."""
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            return cmd_validate(args, out)
        cfg = load_config(args.config, _flags(args))
        ctx = open_run(cfg)
        if args.command == "run-all":
            summary = run_all(ctx, force=args.force, backend=backend)
            _print_manifest(ctx, out)
            print(json.dumps(summary, sort_keys=True), file=out)
            return EXIT_OK
        if args.command == "simulate":
            result = simulate(ctx, backend=backend, force=args.force)
        else:
            result = STAGE_FUNCS[args.command](ctx, force=args.force)
        print(f"{args.command}: {json.dumps(result, sort_keys=True)} ({ctx.run_dir})", file=out)
        return EXIT_OK
    except StageFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc.cause)
    except (ValuemapError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except ValueError as exc:
        # config values rejected by dataclass validation
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
