"""Command line entry point: ``palm run|aggregate|export-model|validate``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import domains, harness
from .core import ConfigurationError, PalmError
from .lamdp import HierarchyError, load_hierarchy, validate_hierarchy

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_RUNTIME = 4


def _run(args) -> int:
    config = harness.load_config(args.config)
    paths = harness.run(config)
    print(f"wrote {len(paths)} trial CSVs to {config.resolve(config.output)}")
    return EXIT_OK


def _aggregate(args) -> int:
    rows = harness.aggregate_glob(args.pattern)
    harness.write_summary(rows, args.output)
    print(f"aggregated {rows[0]['n']} trials x {len(rows)} episodes into {args.output}")
    return EXIT_OK


def _export(args) -> int:
    out = harness.export_model(args.store, args.name, args.output)
    print(f"exported {args.name} to {out}")
    return EXIT_OK


def _validate(args) -> int:
    try:
        h = load_hierarchy(args.hierarchy)
    except FileNotFoundError as exc:
        raise harness.MissingFileError(str(exc)) from None
    target = args.domain
    if target not in ("taxi", "cleanup"):
        domains.domain_of(target)
    problems = validate_hierarchy(h, target, args.seed)
    for p in problems:
        print(f"violation: {p}")
    if problems:
        return EXIT_CONFIG
    print(f"{args.hierarchy}: ok ({len(h.nodes)} nodes)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="palm", description="Hierarchical model-based RL experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the trials described by a YAML config")
    p.add_argument("config")
    p.set_defaults(func=_run)

    p = sub.add_parser("aggregate", help="per-episode mean and 95%% CI over trial CSVs")
    p.add_argument("pattern", help="glob matching trial CSV files")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_aggregate)

    p = sub.add_parser("export-model", help="copy one subtask's learned model out of a trial store")
    p.add_argument("store", help="a trial's model directory")
    p.add_argument("name", help="subtask name")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_export)

    p = sub.add_parser("validate", help="check a hierarchy file against a domain or variant")
    p.add_argument("hierarchy")
    p.add_argument("domain", help="taxi, cleanup or a variant name")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except harness.MissingFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ConfigurationError, HierarchyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PalmError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
