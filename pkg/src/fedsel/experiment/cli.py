"""Command-line entry point: ``fedsel run|plot|audit|bench-select``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from fedsel.distance import DistanceMatrix, read_matrix_csv
from fedsel.exceptions import ConfigurationError, FedselError
from fedsel.experiment.bench import bench_select
from fedsel.experiment.metrics import parse_csv
from fedsel.experiment.plan import PLOT_KINDS, load_plan
from fedsel.experiment.plots import emit_plots
from fedsel.experiment.runner import read_embedding, run_plan
from fedsel.fairness import FairnessState, audit_if

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fedsel", description="Federated client-selection simulator.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("run", help="execute an experiment plan")
    p.add_argument("plan", type=Path, help="plan file (.toml or .json)")
    p.add_argument("--seed", type=int, help="base seed (overrides the plan)")
    p.add_argument("--out", type=Path, help="output directory (overrides the plan and FEDSEL_OUT)")
    p.add_argument("--strategy", action="append", metavar="KIND",
                   help="run only this strategy; repeat for several (e.g. longfed, divfl+fair)")

    p = sub.add_parser("plot", help="render SVG plots from a metrics CSV")
    p.add_argument("csv", type=Path)
    p.add_argument("--kind", action="append", required=True, choices=PLOT_KINDS)
    p.add_argument("--out", type=Path, help="directory for the SVGs (default: next to the CSV)")
    p.add_argument("--embedding", type=Path, help="client embedding CSV for embedding_scatter")
    p.add_argument("--n-clients", type=int, help="number of clients (default: from the bitmap width)")

    p = sub.add_parser("audit", help="list individual-fairness violations in a metrics CSV")
    p.add_argument("csv", type=Path)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--matrix", type=Path,
                   help="distance snapshot; defaults to <csv stem>.matrix.csv, else every pair is audited")
    p.add_argument("--n-clients", type=int)
    p.add_argument("--limit", type=int, default=10, help="violations printed per run")

    p = sub.add_parser("bench-select", help="time one greedy selection")
    p.add_argument("--n", type=int, required=True, help="number of clients")
    p.add_argument("--k", type=int, required=True, help="subset size")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_run(args) -> int:
    plan = load_plan(args.plan).with_overrides(args.seed, args.out, args.strategy)
    table = run_plan(plan)
    print(f"{len(table)} rows from {len(table.groups)} runs written to {plan.output_dir}")
    for key, err in table.failed.items():
        print(f"FAILED {key}: {err}", file=sys.stderr)
    return EXIT_FAILURE if table.failed else EXIT_OK


def _cmd_plot(args) -> int:
    table = parse_csv(args.csv, args.n_clients)
    out = args.out or args.csv.parent
    embedding = clusters = None
    if args.embedding is not None:
        embedding, clusters = read_embedding(args.embedding)
    elif "embedding_scatter" in args.kind and (args.csv.parent / "embedding.csv").exists():
        embedding, clusters = read_embedding(args.csv.parent / "embedding.csv")
    for kind in args.kind:
        for path in emit_plots(table, kind, out, embedding, clusters):
            print(path)
    return EXIT_OK


def _audit_matrix(args) -> Optional[DistanceMatrix]:
    path = args.matrix
    if path is None:
        stem = args.csv.with_suffix("")
        candidate = stem.with_name(stem.name + ".matrix.csv")
        path = candidate if candidate.exists() else None
    return None if path is None else read_matrix_csv(path)


def _cmd_audit(args) -> int:
    matrix = _audit_matrix(args)
    n_clients = args.n_clients
    if matrix is not None:
        if n_clients is not None and n_clients != matrix.n_clients:
            raise ConfigurationError(f"matrix has {matrix.n_clients} clients, not {n_clients}")
        n_clients = matrix.n_clients
    table = parse_csv(args.csv, n_clients)
    n = table.n_clients
    if matrix is None:
        print("no distance snapshot found: auditing every pair as similar")
        matrix = DistanceMatrix.from_distances(np.zeros((n, n)))
    total = 0
    for strategy, repeat in table.groups:
        sel = table.selections(strategy, repeat)
        counts = sel.sum(axis=0)
        state = FairnessState(np.zeros(n), np.zeros(n), counts, len(sel), args.epsilon, args.delta)
        violations = audit_if(state, matrix, args.epsilon, args.delta)
        total += len(violations)
        print(f"{strategy} repeat {repeat}: {len(violations)} violations "
              f"(epsilon={args.epsilon}, delta={args.delta}, rounds={len(sel)})")
        for v in violations[:args.limit]:
            print(f"  clients {v.i},{v.j}: distance {v.distance:.4g}, frequency gap {v.gap:.4g}")
    print(f"total violations: {total}")
    return EXIT_OK


def _cmd_bench(args) -> int:
    if args.trials < 100:
        raise UsageError("bench-select needs --trials >= 100")
    res = bench_select(args.n, args.k, args.trials, args.warmup, args.seed)
    print(f"n={res.n_clients} k={res.subset_size} trials={res.trials} "
          f"mean_ms={res.mean_ms:.4f} std_ms={res.std_ms:.4f}")
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "plot": _cmd_plot, "audit": _cmd_audit, "bench-select": _cmd_bench}


def cli_main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"fedsel: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FedselError, OSError) as exc:
        print(f"fedsel: {exc}", file=sys.stderr)
        return EXIT_FAILURE


def main() -> None:
    sys.exit(cli_main())
