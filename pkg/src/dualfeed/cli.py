"""Command line entry point: ``dualfeed run`` and ``dualfeed validate``.

Exit codes: 0 on success, 1 for invalid input (bad scenario, unwritable
output), 2 when the run finished but was flagged incomplete.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .engine import run_scenario
from .outputs import FORMATS, emit_outputs
from .scenario import ScenarioError, load_scenario

EXIT_OK, EXIT_INVALID, EXIT_INCOMPLETE = 0, 1, 2


def _formats(text: str) -> tuple[str, ...]:
    parts = tuple(p.strip() for p in text.split(",") if p.strip())
    bad = [p for p in parts if p not in FORMATS]
    if bad or not parts:
        raise argparse.ArgumentTypeError(f"formats must be a comma list of {list(FORMATS)}")
    return parts


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualfeed", description="Dual-feed overlay multicast simulator.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a scenario and write outputs")
    run.add_argument("--scenario", required=True, help="scenario YAML file")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.add_argument("--format", type=_formats, default=FORMATS, help="comma list of csv,jsonl,dot")
    run.add_argument("--trace", action="store_true", help="also trace every data packet delivery")

    val = sub.add_parser("validate", help="check a scenario file and exit")
    val.add_argument("--scenario", required=True, help="scenario YAML file")
    return parser


def _load(path: str):
    try:
        return load_scenario(path)
    except FileNotFoundError:
        print(f"error: scenario file not found: {path}", file=sys.stderr)
    except ScenarioError as err:
        print(f"error: {path}: {err}", file=sys.stderr)
    return None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = _load(args.scenario)
    if cfg is None:
        return EXIT_INVALID
    if args.command == "validate":
        print(f"ok: {args.scenario} ({cfg.node_count} nodes, horizon {cfg.horizon}, strategy {cfg.strategy.value})")
        return EXIT_OK

    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.trace:
        cfg = dataclasses.replace(cfg, trace_data=True)
    result = run_scenario(cfg)
    try:
        paths = emit_outputs(result, args.out, args.format)
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    for p in paths:
        print(p)
    if not result.complete:
        for problem in result.problems:
            print(f"incomplete: {problem}", file=sys.stderr)
        return EXIT_INCOMPLETE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
