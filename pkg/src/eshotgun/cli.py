"""Command-line entry points: run experiments, summarise statistics, export
convergence curves.

Exit codes: 0 success, 1 configuration error, 2 runtime failure (partial
results stay persisted and runs are resumable by re-invoking `run`).
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from .harness import (
    METHODS,
    ExperimentConfig,
    comparison_tables,
    config_identity,
    load_directory,
    run_experiment,
    write_convergence_csv,
)
from .problems import PROBLEM_NAMES


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; this harness reserves 2 for runtime
    # failures and reports configuration errors as 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"configuration error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="eshotgun",
        description="Batch Bayesian optimisation benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment configuration")
    run.add_argument("--problem", required=True, choices=PROBLEM_NAMES)
    run.add_argument("--method", required=True, choices=METHODS)
    run.add_argument("--batch-size", type=int, default=10)
    run.add_argument("--budget", type=int, default=200)
    run.add_argument("--repeats", type=int, default=51)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--epsilon", type=float, default=0.1)
    run.add_argument("--gamma", type=float, default=1.0)
    run.add_argument(
        "--inner-budget",
        type=int,
        default=None,
        help="model-field evaluations per inner optimisation (default 10000*d)",
    )
    run.add_argument("--out", required=True, help="directory for run records")

    stats = sub.add_parser("stats", help="per-problem method comparison tables")
    stats.add_argument("--in", dest="in_dirs", nargs="+", required=True)
    stats.add_argument("--alpha", type=float, default=0.05)
    stats.add_argument("--format", choices=("table", "json"), default="table")

    conv = sub.add_parser("conv", help="median/IQR convergence series as CSV")
    conv.add_argument("--in", dest="in_dir", required=True)
    conv.add_argument("--out", required=True)
    return parser


def _cmd_run(args) -> int:
    try:
        config = ExperimentConfig(
            problem=args.problem,
            method=args.method,
            batch_size=args.batch_size,
            budget=args.budget,
            repeats=args.repeats,
            base_seed=args.seed,
            epsilon=args.epsilon,
            gamma=args.gamma,
            inner_budget=args.inner_budget,
        )
    except (ValueError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    try:
        records = run_experiment(config, out_dir=args.out)
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    failed = [r for r in records if r.failed]
    for record in failed:
        print(
            f"repeat {record.repeat_index} failed: {record.error}", file=sys.stderr
        )
    return 2 if failed else 0


def _cmd_stats(args) -> int:
    if not 0.0 < args.alpha < 1.0:
        print("configuration error: alpha must lie in (0, 1)", file=sys.stderr)
        return 1
    records = []
    for directory in args.in_dirs:
        if not Path(directory).is_dir():
            print(f"configuration error: no such directory {directory}", file=sys.stderr)
            return 1
        records.extend(load_directory(directory))
    if not records:
        print("configuration error: no run records found", file=sys.stderr)
        return 1
    try:
        tables = comparison_tables(records, alpha=args.alpha)
    except ValueError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    if not tables:
        print("configuration error: need >= 2 methods per problem", file=sys.stderr)
        return 1
    if args.format == "json":
        doc = {problem: table.to_json_dict() for problem, table in tables.items()}
        print(json.dumps(doc, indent=2))
    else:
        for problem, table in tables.items():
            print(f"# {problem}")
            print(table.to_text())
            print()
    return 0


def _cmd_conv(args) -> int:
    if not Path(args.in_dir).is_dir():
        print(f"configuration error: no such directory {args.in_dir}", file=sys.stderr)
        return 1
    records = [r for r in load_directory(args.in_dir) if not r.failed]
    if not records:
        print("configuration error: no completed run records found", file=sys.stderr)
        return 1
    groups = {json.dumps(config_identity(r.config), sort_keys=True) for r in records}
    if len(groups) > 1:
        print(
            "configuration error: directory mixes configurations; "
            "point --in at a single run output",
            file=sys.stderr,
        )
        return 1
    try:
        write_convergence_csv(records, args.out)
    except OSError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s"
    )
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "stats":
        return _cmd_stats(args)
    return _cmd_conv(args)


if __name__ == "__main__":
    sys.exit(main())
