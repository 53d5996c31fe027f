"""Command-line entry point: gen, run, bench, verify.

Exit codes: 0 ok, 1 usage, 2 correctness failure, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .bench import MATRICES, MODES, BenchConfig, BenchError, emit_report, load_workload, run_cell, run_suite, toggle_cells
from .catalog import Catalog, CatalogError
from .driver import AqpConfig, aqp_order, run_adaptive, run_fixed_order, run_vanilla
from .executor import QueryTimeout
from .frontend import ParseError, json_to_plan, parse_query
from .optimizer import explain
from .plan import PlanError
from .router import route_and_finish
from .workload import PRESETS, GenSpec, generate

EXIT_OK, EXIT_USAGE, EXIT_MISMATCH, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _on_off(v: str) -> bool:
    if v not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return v == "on"


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="aqplab", description="Plan-based and relation-based adaptive query processing lab.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic workload")
    g.add_argument("--preset", required=True, choices=PRESETS)
    g.add_argument("--scale", type=int, default=1)
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--num-queries", type=int, default=None)
    g.add_argument("--out", required=True, type=Path)

    r = sub.add_parser("run", help="run one query")
    r.add_argument("--data", required=True, type=Path)
    r.add_argument("--query", required=True, type=Path)
    r.add_argument("--mode", required=True, choices=MODES)
    r.add_argument("--monitor", type=_on_off, default=True, metavar="on|off")
    r.add_argument("--splitter", type=_on_off, default=True, metavar="on|off")
    r.add_argument("--selector", type=_on_off, default=True, metavar="on|off")
    r.add_argument("--explain", action="store_true")
    r.add_argument("--trace", type=Path, default=None)
    r.add_argument("--timeout-s", type=float, default=60.0)

    b = sub.add_parser("bench", help="run the benchmark matrix")
    b.add_argument("--data", required=True, type=Path)
    b.add_argument("--workload", required=True, type=Path)
    b.add_argument("--modes", required=True)
    b.add_argument("--matrix", choices=MATRICES, default="minimal")
    b.add_argument("--warmup", type=int, default=5)
    b.add_argument("--runs", type=int, default=10)
    b.add_argument("--timeout-s", type=float, default=60.0)
    b.add_argument("--out", required=True, type=Path)

    v = sub.add_parser("verify", help="check every mode against the golden result")
    v.add_argument("--data", required=True, type=Path)
    v.add_argument("--workload", required=True, type=Path)
    v.add_argument("--timeout-s", type=float, default=60.0)
    return p


def _load_catalog(data: Path) -> Catalog:
    catalog = Catalog()
    catalog.load_directory(data)
    return catalog


def _load_query(path: Path, catalog: Catalog):
    text = path.read_text()
    if path.name.endswith(".json"):
        return json_to_plan(text, catalog)
    return parse_query(text, catalog)


def _write_result(res, out) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(res.columns)
    for row in res.rows():
        w.writerow(["" if v is None else v for v in row])


def cmd_gen(args) -> int:
    manifest = generate(GenSpec(args.preset, args.scale, args.seed, args.num_queries), args.out)
    print(f"wrote {len(manifest['queries'])} queries and {len(manifest['tables'])} tables to {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    if args.mode == "aqp-dag" and not args.selector:
        raise UsageError(
            "--selector off is not available for aqp-dag; compare --mode vanilla-fixed-order "
            "against --mode vanilla to measure sub-plan ordering"
        )
    catalog = _load_catalog(args.data)
    plan = _load_query(args.query, catalog)
    golden, m, phys = run_vanilla(plan, catalog, args.timeout_s)
    trace = None
    if args.mode == "vanilla":
        res = golden
        info = {"intermediate_tuples": m.total_intermediate_tuples, "exec_ns": m.wall_ns}
        explained = ["EXPLAIN", explain(phys)]
    elif args.mode == "vanilla-fixed-order":
        order = aqp_order(plan, catalog)
        res, m, phys = run_fixed_order(plan, catalog, order, args.timeout_s)
        info = {"intermediate_tuples": m.total_intermediate_tuples, "exec_ns": m.wall_ns, "order": order}
        explained = ["EXPLAIN", explain(phys)]
    elif args.mode == "router":
        res, m, rtrace = route_and_finish(plan, catalog, timeout_s=args.timeout_s)
        info = {"intermediate_tuples": m.total_intermediate_tuples, "exec_ns": m.wall_ns, "router": rtrace.to_json()}
        explained = ["EXPLAIN ROUTING", json.dumps(rtrace.to_json(), indent=2)]
    else:
        cfg = AqpConfig(args.mode.removeprefix("aqp-"), args.monitor, args.splitter, args.selector)
        res, trace = run_adaptive(plan, catalog, cfg, name=args.query.stem, timeout_s=args.timeout_s)
        info = {"intermediate_tuples": trace.total_intermediate_tuples, "exec_ns": trace.exec_ns,
                "subplan_count": trace.subplan_count}
        explained = ["EXPLAIN SPLIT", trace.split_text, "EXPLAIN ADAPTIVE", trace.explain()]
        if trace.final_plan is not None:
            explained += ["EXPLAIN", explain(trace.final_plan)]
    if args.trace and trace is not None:
        trace.write(args.trace)
    elif args.trace:
        args.trace.write_text(json.dumps({"query": args.query.stem, "mode": args.mode, **info}, indent=2, default=str) + "\n")
    if args.explain:
        print("\n".join(explained), file=sys.stderr)
    _write_result(res, sys.stdout)
    match = res.same_rows(golden)
    print(f"rows={len(res)} checksum={res.checksum()} intermediate_tuples={info['intermediate_tuples']} "
          f"golden_match={str(match).lower()}", file=sys.stderr)
    return EXIT_OK if match else EXIT_MISMATCH


def cmd_bench(args) -> int:
    modes = tuple(m.strip() for m in args.modes.split(",") if m.strip())
    cfg = BenchConfig(args.data, args.workload, modes, args.matrix, args.warmup, args.runs, args.timeout_s)
    report = run_suite(cfg, log=lambda s: print(s, file=sys.stderr))
    emit_report(report, args.out)
    print((args.out / "summary.txt").read_text(), end="")
    return EXIT_MISMATCH if report.failed else EXIT_OK


def cmd_verify(args) -> int:
    catalog = _load_catalog(args.data)
    plans = load_workload(args.workload, catalog)
    cells = [c for m in MODES if m != "vanilla" for c in toggle_cells(m, "full")]
    failures = 0
    for name, plan in plans.items():
        golden, _, _ = run_vanilla(plan, catalog, args.timeout_s)
        order = aqp_order(plan, catalog)
        bad = []
        for cell in cells:
            try:
                out = run_cell(cell, plan, catalog, args.timeout_s, order)
            except QueryTimeout:
                catalog.drop_intermediates()
                bad.append(f"{cell.label} (DNF)")
                continue
            if not out.result.same_rows(golden):
                bad.append(cell.label)
        failures += bool(bad)
        print(f"{name}: {'FAIL ' + ', '.join(bad) if bad else 'ok'}")
    print(f"{len(plans) - failures}/{len(plans)} queries match golden")
    return EXIT_MISMATCH if failures else EXIT_OK


COMMANDS = {"gen": cmd_gen, "run": cmd_run, "bench": cmd_bench, "verify": cmd_verify}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, BenchError, ValueError) as exc:
        print(f"aqplab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except QueryTimeout as exc:
        print(f"aqplab: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (CatalogError, ParseError, PlanError, OSError) as exc:
        print(f"aqplab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
