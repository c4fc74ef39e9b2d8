"""Command-line entry points.

::

    eif-forge estimate --data data.csv --graph graph.json [--folds 5] [--seed 0]
    eif-forge eif --data data.csv --graph graph.json [--folds 5] [--seed 0]
    eif-forge simulate --scenario r2 --n 1000 --reps 200 [--seed 0]
    eif-forge oracle-check --graph graph.json --dist dist.json [--h 1e-5]
    eif-forge validate --graph graph.json

Results go to stdout as JSON (CSV for ``eif``).  Failures print a one-line
JSON object ``{"error": ..., "message": ...}`` and exit with 3 for bad input
data or graphs and 4 for numeric or degenerate-fit failures.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from .estimator import DataError, Dataset, FoldFailure, estimate
from .graph import ColumnSpec, GraphParseError, GraphValidationError, ParameterGraph, parse_graph, validate
from .hilbert import NumericError
from .learners import ConfigurationError, LearnerConfig

__all__ = ["load_csv", "main", "run_estimate", "run_eif_dump", "run_simulate_cmd", "run_oracle_check"]

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def load_csv(path, schema: Sequence[ColumnSpec] | None = None) -> Dataset:
    """Read a header-first, comma-separated numeric table.

    Every cell must parse as a finite number.  Columns declared ``binary`` in
    ``schema`` must hold only 0 and 1.  Errors name the 1-based data row and
    the column.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(set(header)) != len(header) or any(not h for h in header):
            raise DataError(f"{path}: header has empty or duplicate names")
        rows = []
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} cells, header has {len(header)}")
            values = []
            for name, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: row {lineno}, column {name}: cannot parse {cell.strip()!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: row {lineno}, column {name}: missing or non-finite value {cell.strip()!r}")
                values.append(v)
            rows.append(values)
    arr = np.array(rows, dtype=float).reshape(len(rows), len(header))
    columns = {h: arr[:, j] for j, h in enumerate(header)}
    kinds = {c.name: c.kind for c in (schema or ())}
    for name, kind in kinds.items():
        if name not in columns:
            raise DataError(f"{path}: column {name} is required but missing")
        if kind == "binary":
            bad = np.flatnonzero((columns[name] != 0) & (columns[name] != 1))
            if bad.size:
                raise DataError(f"{path}: row {bad[0] + 1}, column {name}: binary column holds "
                                f"{columns[name][bad[0]]:g}")
    full_schema = tuple(ColumnSpec(h, kinds.get(h, "numeric")) for h in header)
    return Dataset(columns, full_schema)


def _read_graph(path) -> ParameterGraph:
    return parse_graph(Path(path).read_text(encoding="utf-8"))


def _emit(obj):
    sys.stdout.write(json.dumps(obj) + "\n")


def _estimate_from_args(args):
    graph = _read_graph(args.graph)
    report = validate(graph)
    if not report.ok:
        raise GraphValidationError(report.findings)
    data = load_csv(args.data, graph.schema)
    return estimate(graph, data, args.folds, args.seed, LearnerConfig(), threads=args.threads)


def run_estimate(args) -> int:
    result = _estimate_from_args(args)
    _emit(result.to_dict())
    return EXIT_OK


def run_eif_dump(args) -> int:
    result = _estimate_from_args(args)
    out = sys.stdout
    out.write("row,fold,f0\n")
    for i, (f, v) in enumerate(zip(result.fold_of, result.f0)):
        out.write(f"{i},{int(f)},{float(v)!r}\n")
    means = " ".join(f"{d.fold}={float(d.eval_mean_f0)!r}" for d in result.diagnostics)
    out.write(f"# fold means of f0: {means}\n")
    return EXIT_OK


def _table(report) -> str:
    keys = ["scenario", "n", "completed", "coverage", "rel_width", "rel_variance", "bias2_mse", "mean_est", "truth"]
    cells = []
    for k in keys:
        v = report.get(k, "")
        cells.append(f"{v:.4f}" if isinstance(v, float) else str(v))
    widths = [max(len(k), len(c)) for k, c in zip(keys, cells)]
    head = "  ".join(k.rjust(w) for k, w in zip(keys, widths))
    body = "  ".join(c.rjust(w) for c, w in zip(cells, widths))
    return head + "\n" + body


def run_simulate_cmd(args) -> int:
    from .scenarios import SCENARIOS, run_simulate

    if args.scenario not in SCENARIOS:
        raise _UsageError(f"unknown scenario {args.scenario!r}; choose from {sorted(SCENARIOS)}")
    start = time.perf_counter()
    report = run_simulate(args.scenario, args.n, args.reps, args.seed, args.folds, threads=args.threads)
    elapsed = time.perf_counter() - start
    _emit(report)
    sys.stderr.write(_table(report) + f"\nwall time {elapsed:.1f} s\n")
    return EXIT_OK


def run_oracle_check(args) -> int:
    from .oracle import DiscreteDistribution, eif_values, exact_psi, gateaux_check

    graph = _read_graph(args.graph)
    report = validate(graph)
    if not report.ok:
        raise GraphValidationError(report.findings)
    try:
        dist = DiscreteDistribution.from_json(Path(args.dist).read_text(encoding="utf-8"))
    except (ValueError, KeyError) as exc:
        raise DataError(f"{args.dist}: {exc}") from exc
    eif = eif_values(graph, dist)
    points = []
    for i in range(len(dist.support)):
        fd, value, err = gateaux_check(graph, dist, i, args.h, eif=eif)
        points.append({"index": i, "fd": fd, "eif": value, "abs_diff": err})
    _emit({"psi": exact_psi(graph, dist), "mean_eif": float(np.dot(dist.probs, eif)),
           "max_abs_diff": max(p["abs_diff"] for p in points), "h": args.h, "points": points})
    return EXIT_OK


def run_validate(args) -> int:
    report = validate(_read_graph(args.graph))
    _emit({"ok": report.ok, "findings": [{"node": f.node, "code": f.code, "message": f.message}
                                         for f in report.findings]})
    return EXIT_OK if report.ok else EXIT_DATA


class _UsageError(Exception):
    pass


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eif-forge", description="Influence functions and one-step estimates "
                                "for parameters written as primitive graphs.")
    sub = p.add_subparsers(dest="command", required=True)

    def data_args(sp):
        sp.add_argument("--data", required=True, help="CSV file with a header row")
        sp.add_argument("--graph", required=True, help="graph JSON file")
        sp.add_argument("--folds", type=int, default=5)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--learner", choices=["kernel"], default="kernel")
        sp.add_argument("--threads", type=int, default=1)

    sp = sub.add_parser("estimate", help="cross-fitted one-step estimate with a 95%% interval")
    data_args(sp)
    sp.set_defaults(func=run_estimate)
    sp = sub.add_parser("eif", help="per-observation estimated influence function values as CSV")
    data_args(sp)
    sp.set_defaults(func=run_eif_dump)
    sp = sub.add_parser("simulate", help="Monte Carlo study of a built-in scenario")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--reps", type=int, default=200)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--folds", type=int, default=5)
    sp.add_argument("--threads", type=int, default=1)
    sp.set_defaults(func=run_simulate_cmd)
    sp = sub.add_parser("oracle-check", help="exact influence function vs. finite differences")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--dist", required=True, help="discrete distribution JSON")
    sp.add_argument("--h", type=_positive_float, default=1e-5)
    sp.set_defaults(func=run_oracle_check)
    sp = sub.add_parser("validate", help="list structural and typing findings for a graph")
    sp.add_argument("--graph", required=True)
    sp.set_defaults(func=run_validate)
    return p


def _fail(kind, message, code) -> int:
    _emit({"error": kind, "message": message})
    return code


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except FoldFailure as exc:
        cause = exc.cause
        code = EXIT_NUMERIC if isinstance(cause, (NumericError, ConfigurationError, ArithmeticError)) else EXIT_DATA
        return _fail(type(cause).__name__, str(exc), code)
    except _UsageError as exc:
        return _fail("UsageError", str(exc), EXIT_USAGE)
    except (DataError, GraphParseError, GraphValidationError, FileNotFoundError, KeyError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_DATA)
    except (NumericError, ConfigurationError, ArithmeticError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_NUMERIC)
    except ValueError as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_DATA)


if __name__ == "__main__":
    sys.exit(main())
