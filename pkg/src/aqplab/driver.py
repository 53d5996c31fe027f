"""The adaptive loop: split, select, optimize, execute, materialize, feed back.

Every run records a trace of its rounds. With the splitter off, the loop
still runs to fix the sub-plan order, then the fragments are merged back into
one plan and that plan is what gets measured.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field

from .cardinality import CardinalityModel, apply_feedback, feedback_for
from .catalog import Catalog, IntermediateResult
from .executor import ExecMetrics, ResultSet, execute
from .optimizer import (
    AggregateExec,
    CrossProductExec,
    FilterExec,
    HashJoin,
    MaterializedScanExec,
    PhysicalPlan,
    PhysNode,
    ProjectExec,
    join_tree,
    join_tree_plan,
    optimize,
    optimize_with_fixed_order,
)
from .plan import (
    TAIL_TYPES,
    ColumnRef,
    LogicalPlan,
    MaterializedScan,
    PlanError,
    Scan,
    SpjQuery,
    Unit,
    decompose,
    tail_columns,
)
from . import splitter_dag, splitter_tree

STRATEGIES = ("dag", "tree")


@dataclass(frozen=True)
class AqpConfig:
    strategy: str = "tree"
    monitor: bool = True
    splitter: bool = True
    selector: bool = True

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.strategy == "dag" and not self.selector:
            raise ValueError(
                "the dag strategy has no separable selector; compare vanilla-fixed-order "
                "against vanilla (monitor off) to measure it"
            )


@dataclass
class RoundRecord:
    round: int
    subplan_id: int
    root_kind: str
    aliases: list[str]
    est_rows: float
    est_source: str
    act_rows: int | None = None
    intermediate_id: int | None = None
    rebind: dict[str, int] = field(default_factory=dict)
    final: bool = False


@dataclass
class AqpTrace:
    query: str
    config: AqpConfig
    rounds: list[RoundRecord] = field(default_factory=list)
    cannot_split: bool = False
    reason: str | None = None
    merged_order: object = None
    total_intermediate_tuples: int = 0
    exec_ns: int = 0
    wall_ns: int = 0
    materialized_rows: int = 0
    split_text: str = ""
    # runtime only; not exported
    final_plan: PhysicalPlan | None = field(default=None, repr=False)
    fragments: dict[int, PhysicalPlan] = field(default_factory=dict, repr=False)

    @property
    def subplan_count(self) -> int:
        return len(self.rounds)

    def to_json(self) -> dict:
        return {
            "query": self.query,
            "config": dataclasses.asdict(self.config),
            "cannot_split": self.cannot_split,
            "reason": self.reason,
            "rounds": [dataclasses.asdict(r) for r in self.rounds],
            "merged_order": self.merged_order,
            "totals": {
                "total_intermediate_tuples": self.total_intermediate_tuples,
                "exec_ns": self.exec_ns,
                "wall_ns": self.wall_ns,
                "materialized_rows": self.materialized_rows,
                "subplan_count": self.subplan_count,
            },
        }

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def explain(self) -> str:
        lines = []
        if self.cannot_split:
            lines.append(f"CannotSplit: {self.reason}")
        for r in self.rounds:
            act = "-" if r.act_rows is None else str(r.act_rows)
            lines.append(f"round {r.round}: subplan #{r.subplan_id} root={r.root_kind} est={r.est_rows:.0f} act={act}")
        return "\n".join(lines)


class _Loop:
    def __init__(self, catalog: Catalog, config: AqpConfig, trace: AqpTrace, deadline_ns: int | None):
        self.catalog = catalog
        self.config = config
        self.trace = trace
        self.deadline_ns = deadline_ns
        self.model = CardinalityModel(catalog)

    def needed_columns(self, q: SpjQuery, aliases: frozenset[str]) -> list[str]:
        cols: set[ColumnRef] = {c for c in tail_columns(q.tail) if c.alias in aliases}
        for p in q.predicates:
            if p.aliases & aliases and not p.aliases <= aliases:
                cols.add(p.side(aliases))
        if not q.tail:
            for u in q.units:
                if u.aliases <= aliases:
                    cols |= set(_unit_columns(u, self.catalog))
        return sorted(str(c) for c in cols)

    def run_fragment(self, q: SpjQuery, aliases: frozenset[str], record: RoundRecord) -> SpjQuery:
        """Execute the units covering ``aliases``; return the rebound residual."""
        sub = splitter_dag.subquery(q, aliases)
        needed = self.needed_columns(q, aliases)
        phys = optimize(sub, self.catalog, self.model, output_columns=[ColumnRef.parse(c) for c in needed])
        t0 = time.perf_counter_ns()
        res, m = execute(phys, self.catalog, deadline_ns=self.deadline_ns)
        if not needed:
            needed = [res.columns[0]]
        inter = self.catalog.materialize(
            {c: res.data[c] for c in needed}, needed, analyze=self.config.monitor
        )
        self._set_prior(inter, sub)
        if self.config.monitor:
            apply_feedback(self.catalog, feedback_for(self.catalog, inter.id))
        self.trace.exec_ns += time.perf_counter_ns() - t0
        # fragment roots are intermediates of the whole query
        self.trace.total_intermediate_tuples += m.total_intermediate_tuples + len(res)
        self.trace.materialized_rows += inter.exact_row_count
        self.trace.fragments[inter.id] = phys
        record.act_rows = inter.exact_row_count
        record.intermediate_id = inter.id
        record.rebind = {a: inter.id for a in sorted(aliases)}
        return replace_units(q, aliases, MaterializedScan(inter.id, inter.columns))

    def _set_prior(self, inter: IntermediateResult, sub: SpjQuery) -> None:
        est = splitter_dag.estimate_subquery(sub, self.model)
        inter.prior_rows = est.rows
        distinct = {}
        for c in inter.columns:
            ref = ColumnRef.parse(c)
            u = self.model.unit(sub.units[sub.unit_of(ref.alias)])
            distinct[c] = min(u.key_distinct(c), est.rows)
        inter.prior_distinct = distinct

    def run_final(self, q: SpjQuery, record: RoundRecord) -> ResultSet:
        phys = optimize(q, self.catalog, self.model)
        t0 = time.perf_counter_ns()
        res, m = execute(phys, self.catalog, deadline_ns=self.deadline_ns)
        self.trace.exec_ns += time.perf_counter_ns() - t0
        self.trace.total_intermediate_tuples += m.total_intermediate_tuples
        self.trace.final_plan = phys
        record.act_rows = len(res)
        record.final = True
        return res


def _unit_columns(u: Unit, catalog: Catalog) -> list[ColumnRef]:
    if isinstance(u.leaf, Scan):
        return [ColumnRef(u.leaf.alias, c) for c in catalog.table_def(u.leaf.table).column_names]
    return [ColumnRef.parse(c) for c in u.leaf.columns]


def replace_units(q: SpjQuery, aliases: frozenset[str], leaf: MaterializedScan) -> SpjQuery:
    """Rebind: the units covering ``aliases`` become one intermediate leaf."""
    units = [u for u in q.units if not u.aliases <= aliases] + [Unit(leaf)]
    preds = [p for p in q.predicates if not p.aliases <= aliases]
    return SpjQuery(units, preds, list(q.tail))


def _run_tree(loop: _Loop, plan: LogicalPlan) -> ResultSet:
    cfg, catalog, model = loop.config, loop.catalog, loop.model
    current = splitter_tree.reorder_joins(plan, catalog, reorder=cfg.selector)
    q = decompose(current)
    rnd = 0
    while True:
        rnd += 1
        candidates = splitter_tree.split_plan(current, model)
        chosen = None
        if candidates:
            chosen = (splitter_tree.select_next if cfg.selector else splitter_tree.first_bottom_up)(candidates)
        if rnd == 1:
            loop.trace.split_text = splitter_tree.explain_split(candidates, chosen)
        if chosen is None or chosen.aliases == q.aliases:
            est = model.estimate_node(decompose_root(current))
            rec = RoundRecord(rnd, rnd, "Final", sorted(q.aliases), est.rows, est.source)
            loop.trace.rounds.append(rec)
            return loop.run_final(q, rec)
        rec = RoundRecord(
            rnd, rnd, chosen.root_kind, sorted(chosen.aliases), chosen.estimated_rows.rows, chosen.estimated_rows.source
        )
        loop.trace.rounds.append(rec)
        q = loop.run_fragment(q, chosen.aliases, rec)
        current = join_tree_plan(q, catalog, model)


def decompose_root(plan: LogicalPlan):
    """SPJ root of a plan (below any Project/Aggregate)."""
    node = plan.root
    while isinstance(node, TAIL_TYPES):
        node = node.child
    return node


def _run_dag(loop: _Loop, plan: LogicalPlan) -> ResultSet:
    catalog, model = loop.catalog, loop.model
    q = decompose(plan)
    try:
        dag = splitter_dag.build_dag(q, catalog)
        split = splitter_dag.split(dag, model)
        loop.trace.split_text = splitter_dag.explain_split(dag, split)
    except splitter_dag.NotOrientable as exc:
        split = None
        loop.trace.reason = f"NotOrientable: {exc}"
    if split is None or split.cannot_split:
        loop.trace.cannot_split = True
        if loop.trace.reason is None:
            loop.trace.reason = "no split point"
        est = splitter_dag.estimate_subquery(q, model)
        rec = RoundRecord(1, 1, "Final", sorted(q.aliases), est.rows, est.source)
        loop.trace.rounds.append(rec)
        return loop.run_final(q, rec)
    remaining = list(split.subplans)
    rnd = 0
    while remaining:
        rnd += 1
        # selection is re-evaluated against current estimates every round
        scored = [(splitter_dag.estimate_subquery(splitter_dag.subquery(q, s.aliases), model), s) for s in remaining]
        est, pick = min(scored, key=lambda t: (t[0].rows, t[1].label))
        remaining.remove(pick)
        rec = RoundRecord(rnd, pick.id, "Join" if len(pick.aliases) > 1 else "Filter", list(pick.aliases), est.rows, est.source)
        loop.trace.rounds.append(rec)
        q = loop.run_fragment(q, frozenset(pick.aliases), rec)
    rnd += 1
    est = splitter_dag.estimate_subquery(q, model)
    rec = RoundRecord(rnd, len(split.subplans) + 1, "Final", sorted(q.aliases), est.rows, est.source)
    loop.trace.rounds.append(rec)
    return loop.run_final(q, rec)


def merge_subplans(trace: AqpTrace, fragments: dict[int, PhysicalPlan] | None = None) -> PhysicalPlan:
    """Fold every intermediate back into the plan that consumed it.

    Walks the final plan depth-first and replaces each MaterializedScan with
    the fragment that produced it, recursively, so the join order is the one
    the split run executed.
    """
    fragments = trace.fragments if fragments is None else fragments
    if trace.final_plan is None:
        raise PlanError("trace has no final plan to merge into")

    def sub(n: PhysNode) -> PhysNode:
        if isinstance(n, MaterializedScanExec):
            frag = fragments.get(n.id)
            if frag is None:
                raise PlanError(f"dangling materialized scan #{n.id}")
            # keep only the columns the intermediate exposed
            cols = tuple(ColumnRef.parse(c) for c in n.columns)
            return ProjectExec(cols, sub(frag.root), est=frag.root.est)
        if isinstance(n, HashJoin):
            return dataclasses.replace(n, build=sub(n.build), probe=sub(n.probe), actual=None)
        if isinstance(n, CrossProductExec):
            return dataclasses.replace(n, left=sub(n.left), right=sub(n.right), actual=None)
        if isinstance(n, (FilterExec, ProjectExec, AggregateExec)):
            return dataclasses.replace(n, child=sub(n.child), actual=None)
        return dataclasses.replace(n, actual=None)

    return PhysicalPlan(sub(trace.final_plan.root), trace.final_plan.cost)


def run_adaptive(
    plan: LogicalPlan,
    catalog: Catalog,
    config: AqpConfig = AqpConfig(),
    name: str = "",
    timeout_s: float | None = None,
) -> tuple[ResultSet, AqpTrace]:
    trace = AqpTrace(name, config)
    t0 = time.perf_counter_ns()
    deadline = None if timeout_s is None else t0 + int(timeout_s * 1e9)
    loop = _Loop(catalog, config, trace, deadline)
    try:
        if config.strategy == "tree":
            result = _run_tree(loop, plan)
        else:
            result = _run_dag(loop, plan)
        merged = merge_subplans(trace)
        trace.merged_order = join_tree(merged.root)
        if not config.splitter:
            # the merged plan reads only base tables
            catalog.drop_intermediates()
            t1 = time.perf_counter_ns()
            result, m = execute(merged, catalog, deadline_ns=deadline)
            trace.exec_ns = time.perf_counter_ns() - t1
            trace.total_intermediate_tuples = m.total_intermediate_tuples
            trace.materialized_rows = 0
            trace.final_plan = merged
    finally:
        catalog.drop_intermediates()
    trace.wall_ns = time.perf_counter_ns() - t0
    return result, trace


def run_vanilla(
    plan: LogicalPlan, catalog: Catalog, timeout_s: float | None = None
) -> tuple[ResultSet, ExecMetrics, PhysicalPlan]:
    phys = optimize(plan, catalog)
    res, m = execute(phys, catalog, timeout_s=timeout_s)
    return res, m, phys


def aqp_order(plan: LogicalPlan, catalog: Catalog, strategy: str = "tree"):
    """Join order of the merged plan from a monitor-off adaptive run."""
    _, trace = run_adaptive(plan, catalog, AqpConfig(strategy=strategy, monitor=False))
    return trace.merged_order


def run_fixed_order(
    plan: LogicalPlan, catalog: Catalog, order, timeout_s: float | None = None
) -> tuple[ResultSet, ExecMetrics, PhysicalPlan]:
    """Vanilla execution forced to follow ``order``."""
    phys = optimize_with_fixed_order(plan, order, catalog)
    res, m = execute(phys, catalog, timeout_s=timeout_s)
    return res, m, phys
