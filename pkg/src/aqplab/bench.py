"""Benchmark harness: warmup and measured runs, golden checks, reports.

Every query's golden result comes from one vanilla execution before any
measured cell runs. Cells are (query, mode, toggles); each cell runs
``warmup`` discarded executions followed by ``runs`` measured ones.
"""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

from .catalog import Catalog
from .driver import AqpConfig, aqp_order, run_adaptive, run_fixed_order, run_vanilla
from .executor import QueryTimeout, ResultSet
from .frontend import json_to_plan, parse_query
from .plan import LogicalPlan
from .router import route_and_finish

MODES = ("vanilla", "aqp-dag", "aqp-tree", "router", "vanilla-fixed-order")
MATRICES = ("full", "minimal")
CSV_HEADER = (
    "query", "mode", "strategy", "monitor", "splitter", "selector", "run_idx",
    "wall_ns", "exec_ns", "intermediate_tuples", "subplan_count", "result_checksum", "golden_match",
)
DNF = "DNF"


class BenchError(Exception):
    pass


@dataclass(frozen=True)
class Cell:
    mode: str
    config: AqpConfig | None = None

    @property
    def strategy(self) -> str:
        return self.config.strategy if self.config else "-"

    def toggle(self, name: str) -> str:
        if self.config is None:
            return "-"
        return "on" if getattr(self.config, name) else "off"

    @property
    def label(self) -> str:
        if self.config is None:
            return self.mode
        return f"{self.mode}[m={self.toggle('monitor')},sp={self.toggle('splitter')},se={self.toggle('selector')}]"

    @property
    def slug(self) -> str:
        return self.label.replace("[", "_").replace("]", "").replace(",", "_").replace("=", "")


def toggle_cells(mode: str, matrix: str) -> list[Cell]:
    """Toggle combinations measured for ``mode``.

    ``minimal`` holds the all-on configuration plus each single module
    switched off; ``full`` is every valid combination.
    """
    if mode not in ("aqp-dag", "aqp-tree"):
        return [Cell(mode)]
    strategy = mode.removeprefix("aqp-")
    if matrix == "full":
        combos = [(m, sp, se) for m in (True, False) for sp in (True, False) for se in (True, False)]
    else:
        combos = [(True, True, True), (False, True, True), (True, False, True), (True, True, False)]
    cells = []
    for m, sp, se in combos:
        if strategy == "dag" and not se:
            continue
        cells.append(Cell(mode, AqpConfig(strategy, m, sp, se)))
    return cells


@dataclass
class BenchConfig:
    data_dir: Path
    workload_dir: Path
    modes: tuple[str, ...] = ("vanilla", "aqp-tree")
    matrix: str = "minimal"
    warmup: int = 5
    runs: int = 10
    timeout_s: float = 60.0

    def __post_init__(self):
        self.data_dir = Path(self.data_dir)
        self.workload_dir = Path(self.workload_dir)
        if not self.modes:
            raise BenchError("no modes selected")
        unknown = [m for m in self.modes if m not in MODES]
        if unknown:
            raise BenchError(f"unknown mode(s): {', '.join(unknown)}")
        if self.matrix not in MATRICES:
            raise BenchError(f"unknown matrix {self.matrix!r}")
        if self.runs < 1:
            raise BenchError("runs must be at least 1")
        if self.warmup < 0:
            raise BenchError("warmup must be non-negative")

    def cells(self) -> list[Cell]:
        return [c for m in self.modes for c in toggle_cells(m, self.matrix)]


@dataclass
class RunRow:
    query: str
    cell: Cell
    run_idx: int
    wall_ns: int | None
    exec_ns: int | None
    intermediate_tuples: int | None
    subplan_count: int | None
    checksum: str | None
    golden_match: bool | None

    @property
    def dnf(self) -> bool:
        return self.wall_ns is None

    def csv_row(self) -> list:
        c = self.cell
        if self.dnf:
            return [self.query, c.mode, c.strategy, c.toggle("monitor"), c.toggle("splitter"), c.toggle("selector"),
                    self.run_idx, DNF, DNF, "", "", "", DNF]
        return [self.query, c.mode, c.strategy, c.toggle("monitor"), c.toggle("splitter"), c.toggle("selector"),
                self.run_idx, self.wall_ns, self.exec_ns, self.intermediate_tuples, self.subplan_count,
                self.checksum, str(self.golden_match).lower()]


@dataclass
class BenchReport:
    cells: list[Cell]
    queries: list[str]
    rows: list[RunRow] = field(default_factory=list)
    mismatches: list[tuple[str, str]] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return bool(self.mismatches)

    def measured(self, query: str, cell: Cell) -> list[RunRow]:
        return [r for r in self.rows if r.query == query and r.cell == cell and not r.dnf]

    def mean(self, query: str, cell: Cell, metric: str) -> float | None:
        rows = self.measured(query, cell)
        if not rows:
            return None
        return statistics.fmean(getattr(r, metric) for r in rows)

    def improvements(self, cell: Cell, metric: str = "wall_ns") -> list[float]:
        """Per-query vanilla mean / cell mean, ascending; queries with a DNF side are skipped."""
        base = Cell("vanilla")
        out = []
        for q in self.queries:
            v, m = self.mean(q, base, metric), self.mean(q, cell, metric)
            if v is None or m is None:
                continue
            out.append(v / m if m else float("inf"))
        return sorted(out)

    def totals(self, cell: Cell) -> dict[str, float]:
        tot = {"wall_ns": 0.0, "exec_ns": 0.0, "intermediate_tuples": 0.0, "dnf": 0}
        for q in self.queries:
            if not self.measured(q, cell):
                tot["dnf"] += 1
                continue
            for k in ("wall_ns", "exec_ns", "intermediate_tuples"):
                tot[k] += self.mean(q, cell, k)
        return tot


def load_workload(workload_dir: Path, catalog: Catalog) -> dict[str, LogicalPlan]:
    """Queries by file stem; a ``.plan.json`` with no matching ``.sql`` is loaded as a plan."""
    qdir = workload_dir / "queries" if (workload_dir / "queries").is_dir() else workload_dir
    plans: dict[str, LogicalPlan] = {}
    for f in sorted(qdir.glob("*.sql")):
        plans[f.stem] = parse_query(f.read_text(), catalog)
    for f in sorted(qdir.glob("*.plan.json")):
        name = f.name.removesuffix(".plan.json")
        plans.setdefault(name, json_to_plan(f.read_text()))
    if not plans:
        raise BenchError(f"no queries found under {qdir}")
    return dict(sorted(plans.items()))


@dataclass
class Outcome:
    result: ResultSet
    exec_ns: int
    intermediate_tuples: int
    subplan_count: int


def run_cell(cell: Cell, plan: LogicalPlan, catalog: Catalog, timeout_s: float | None, order=None) -> Outcome:
    """One execution of ``plan`` under ``cell``; raises QueryTimeout past the limit."""
    if cell.mode == "vanilla":
        res, m, _ = run_vanilla(plan, catalog, timeout_s)
        return Outcome(res, m.wall_ns, m.total_intermediate_tuples, 1)
    if cell.mode == "vanilla-fixed-order":
        res, m, _ = run_fixed_order(plan, catalog, order, timeout_s)
        return Outcome(res, m.wall_ns, m.total_intermediate_tuples, 1)
    if cell.mode == "router":
        res, m, _ = route_and_finish(plan, catalog, timeout_s=timeout_s)
        return Outcome(res, m.wall_ns, m.total_intermediate_tuples, 1)
    res, trace = run_adaptive(plan, catalog, cell.config, timeout_s=timeout_s)
    return Outcome(res, trace.exec_ns, trace.total_intermediate_tuples, trace.subplan_count)


def run_suite(cfg: BenchConfig, log=None) -> BenchReport:
    catalog = Catalog()
    catalog.load_directory(cfg.data_dir)
    plans = load_workload(cfg.workload_dir, catalog)
    cells = cfg.cells()
    report = BenchReport(cells, list(plans))
    for name, plan in plans.items():
        try:
            golden, _, _ = run_vanilla(plan, catalog, cfg.timeout_s)
        except QueryTimeout:
            golden = None
        order = None
        for cell in cells:
            if cell.mode == "vanilla-fixed-order" and order is None:
                order = aqp_order(plan, catalog)
            for i in range(cfg.warmup + cfg.runs):
                t0 = time.perf_counter_ns()
                try:
                    out = run_cell(cell, plan, catalog, cfg.timeout_s, order)
                except QueryTimeout:
                    catalog.drop_intermediates()
                    if i >= cfg.warmup:
                        report.rows.append(RunRow(name, cell, i - cfg.warmup, None, None, None, None, None, None))
                    continue
                wall = time.perf_counter_ns() - t0
                if i < cfg.warmup:
                    continue
                match = golden is not None and out.result.same_rows(golden)
                if not match and (name, cell.label) not in report.mismatches:
                    report.mismatches.append((name, cell.label))
                report.rows.append(RunRow(name, cell, i - cfg.warmup, wall, out.exec_ns, out.intermediate_tuples,
                                          out.subplan_count, out.result.checksum(), match))
            if log:
                log(f"{name} {cell.label} done")
    return report


def _fmt(x: float) -> str:
    return f"{x:.4f}"


def emit_report(report: BenchReport, out: str | Path) -> list[Path]:
    out = Path(out)
    plot = out / "plotdata"
    plot.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "report.csv"
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in report.rows:
            w.writerow(r.csv_row())
    written.append(path)

    lines = ["status: FAILED" if report.failed else "status: OK"]
    for q, label in report.mismatches:
        lines.append(f"golden mismatch: query {q} mode {label}")
    lines.append("")
    lines.append(f"{'cell':<44} {'wall_ms':>12} {'exec_ms':>12} {'intermediates':>14} {'dnf':>4} "
                 f"{'impr_min':>9} {'impr_med':>9} {'impr_max':>9}")
    totals = []
    for cell in report.cells:
        t = report.totals(cell)
        imp = report.improvements(cell)
        stats = (min(imp), statistics.median(imp), max(imp)) if imp else (float("nan"),) * 3
        lines.append(f"{cell.label:<44} {t['wall_ns'] / 1e6:>12.2f} {t['exec_ns'] / 1e6:>12.2f} "
                     f"{t['intermediate_tuples']:>14.0f} {t['dnf']:>4} {stats[0]:>9.3f} {stats[1]:>9.3f} {stats[2]:>9.3f}")
        totals.append((cell, t))
    path = out / "summary.txt"
    path.write_text("\n".join(lines) + "\n")
    written.append(path)

    path = plot / "total_time.dat"
    with path.open("w") as f:
        f.write("# cell wall_ms exec_ms intermediates\n")
        for cell, t in totals:
            f.write(f"{cell.slug} {t['wall_ns'] / 1e6:.3f} {t['exec_ns'] / 1e6:.3f} {t['intermediate_tuples']:.0f}\n")
    written.append(path)
    for cell in report.cells:
        if cell.mode == "vanilla":
            continue
        for metric, suffix in (("wall_ns", "time"), ("intermediate_tuples", "intermediates")):
            path = plot / f"improvement_{suffix}_{cell.slug}.dat"
            path.write_text("".join(_fmt(v) + "\n" for v in report.improvements(cell, metric)))
            written.append(path)
    return written
