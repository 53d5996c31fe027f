"""Relation-based baseline: route source batches through left-deep orders.

The source relation is the one the vanilla plan streams from. Candidate
orders keep that source leftmost. Each candidate processes its own trial
batches of the source; the candidate with the fewest intermediate tuples
per source tuple then processes the rest. Trials are real work, so their
output is part of the result.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .cardinality import CardinalityModel
from .catalog import Catalog
from .executor import Batch, ExecMetrics, HashIndex, QueryTimeout, ResultSet, _rows, execute
from .optimizer import (
    HashJoin,
    JoinContext,
    MaterializedScanExec,
    PhysNode,
    TableScan,
    _Builder,
    _tail,
    optimize,
    prune_columns,
)
from .plan import LogicalPlan, PlanError, decompose, tail_columns


class NonSpjUnsupported(PlanError):
    pass


@dataclass(frozen=True)
class RoutingPolicy:
    batch_size: int = 64
    max_candidates: int = 4
    exploration_budget: float = 0.1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not 0 < self.exploration_budget <= 0.5:
            raise ValueError("exploration_budget must be in (0, 0.5]")


@dataclass
class RouterTrace:
    source: str
    candidates: list[list[str]] = field(default_factory=list)
    estimated_cost: list[float] = field(default_factory=list)
    trial_rows: list[int] = field(default_factory=list)
    trial_intermediates: list[int] = field(default_factory=list)
    winner: int = 0

    def per_tuple(self) -> list[float]:
        return [i / r if r else math.inf for i, r in zip(self.trial_intermediates, self.trial_rows)]

    def to_json(self) -> dict:
        return {
            "source": self.source,
            "candidates": self.candidates,
            "estimated_cost": self.estimated_cost,
            "trial_rows": self.trial_rows,
            "trial_intermediates": self.trial_intermediates,
            "winner": self.winner,
        }


def _spj(plan: LogicalPlan):
    try:
        return decompose(plan)
    except PlanError as exc:
        raise NonSpjUnsupported(str(exc)) from None


def vanilla_source(plan: LogicalPlan, catalog: Catalog, model: CardinalityModel | None = None) -> str:
    """Alias of the leaf the vanilla plan's pipeline streams from."""
    node: PhysNode = optimize(plan, catalog, model).root
    while True:
        if isinstance(node, HashJoin):
            node = node.probe
        elif isinstance(node, (TableScan,)):
            return node.alias
        elif isinstance(node, MaterializedScanExec):
            raise NonSpjUnsupported("router runs on base relations only")
        else:
            node = node.children[0]


def enumerate_orders(
    plan: LogicalPlan, catalog: Catalog, policy: RoutingPolicy = RoutingPolicy(), model: CardinalityModel | None = None
) -> tuple[list[list[int]], list[float], JoinContext]:
    """Up to ``max_candidates`` left-deep orders from the vanilla source, cheapest first.

    Orders are unit-index sequences over the returned context. A relation
    joins only once a predicate connects it to the prefix, unless nothing
    remaining connects.
    """
    model = model or CardinalityModel(catalog)
    q = _spj(plan)
    ctx = JoinContext(q, model)
    src = ctx.owner[vanilla_source(plan, catalog, model)]
    found: list[tuple[float, list[int]]] = []

    def extend(seq: list[int], mask: int, cost: float) -> None:
        if len(seq) == ctx.n:
            found.append((cost, list(seq)))
            return
        rest = [i for i in range(ctx.n) if not mask >> i & 1]
        conn = [i for i in rest if ctx.adj[i] & mask]
        for i in conn or rest:
            m2 = mask | 1 << i
            seq.append(i)
            extend(seq, m2, cost + ctx.card(m2))
            seq.pop()

    extend([src], 1 << src, 0.0)
    found.sort(key=lambda t: (t[0], [ctx.labels[i] for i in t[1]]))
    top = found[: policy.max_candidates]
    return [s for _, s in top], [c for c, _ in top], ctx


class _Pipeline:
    """One left-deep order: hash indexes over each build relation."""

    def __init__(self, order: list[int], ctx: JoinContext, builds: dict[int, Batch]):
        self.steps = []
        covered = ctx.units[order[0]].aliases
        for i in order[1:]:
            unit = ctx.units[i]
            preds = ctx.preds_between(1 << i, _mask(ctx, covered))
            keys = [(str(p.side(unit.aliases)), str(p.side(covered))) for p in preds]
            self.steps.append((i, HashIndex(builds[i], keys) if keys else None))
            covered = covered | unit.aliases

    def run(self, batch: Batch, builds: dict[int, Batch]) -> tuple[Batch, int]:
        inter = 0
        for i, index in self.steps:
            if _rows(batch) == 0:
                return {}, inter
            if index is None:
                b = builds[i]
                nl, nr = _rows(batch), _rows(b)
                out = {c: np.repeat(a, nr) for c, a in batch.items()}
                out.update({c: np.tile(a, nl) for c, a in b.items()})
                batch = out
            else:
                batch = index.probe(batch)
            inter += _rows(batch)
        return batch, inter


def _mask(ctx: JoinContext, aliases) -> int:
    m = 0
    for a in aliases:
        m |= 1 << ctx.owner[a]
    return m


def route_and_finish(
    plan: LogicalPlan,
    catalog: Catalog,
    policy: RoutingPolicy = RoutingPolicy(),
    timeout_s: float | None = None,
) -> tuple[ResultSet, ExecMetrics, RouterTrace]:
    t0 = time.perf_counter_ns()
    deadline = None if timeout_s is None else t0 + int(timeout_s * 1e9)
    model = CardinalityModel(catalog)
    q = _spj(plan)
    orders, costs, ctx = enumerate_orders(plan, catalog, policy, model)
    src = orders[0][0]
    trace = RouterTrace(ctx.labels[src], [[ctx.labels[i] for i in o] for o in orders], costs)

    # every relation is scanned and filtered once; candidates share the builds
    builder = _Builder(ctx, catalog)
    leaves = {i: builder.leaf(i) for i in range(ctx.n)}
    needed = _needed_columns(q, ctx, catalog)
    intermediates = 0
    rel: dict[int, Batch] = {}
    for i, leaf in leaves.items():
        prune_columns(leaf, needed)
        res, m = execute(leaf, catalog, deadline_ns=deadline)
        intermediates += len(res) + m.total_intermediate_tuples
        rel[i] = res.data
    source = rel[src]
    n_src = _rows(source)

    pipes = [_Pipeline(o, ctx, rel) for o in orders]
    k = len(pipes)
    trial_total = min(n_src, math.ceil(policy.exploration_budget * n_src))
    size = max(1, min(policy.batch_size, math.ceil(trial_total / k))) if trial_total else 1
    outputs: list[Batch] = []
    trial_rows = [0] * k
    trial_inter = [0] * k
    pos, turn = 0, 0
    while pos < trial_total:
        end = min(pos + size, trial_total)
        batch = {c: a[pos:end] for c, a in source.items()}
        out, inter = pipes[turn].run(batch, rel)
        trial_rows[turn] += end - pos
        trial_inter[turn] += inter
        if _rows(out):
            outputs.append(out)
        pos, turn = end, (turn + 1) % k
        _check(deadline)
    trace.trial_rows, trace.trial_intermediates = trial_rows, trial_inter
    per = trace.per_tuple()
    # untried candidates (tiny sources) cannot win
    trace.winner = min(range(k), key=lambda j: (per[j], j))
    win = pipes[trace.winner]
    for s in range(pos, n_src, 1024):
        batch = {c: a[s : min(s + 1024, n_src)] for c, a in source.items()}
        out, inter = win.run(batch, rel)
        intermediates += inter
        if _rows(out):
            outputs.append(out)
        _check(deadline)
    intermediates += sum(trial_inter)

    joined = _union(outputs, ctx, rel, orders[0])
    inter = catalog.materialize(joined, list(joined), analyze=False)
    try:
        scan = MaterializedScanExec(inter.id, tuple(joined))
        root = _tail(q.tail, scan)
        res, tail_m = execute(root, catalog, deadline_ns=deadline)
    finally:
        catalog.drop_intermediates()
    metrics = ExecMetrics(
        operator_rows=[("0", root.kind, len(res))],
        total_intermediate_tuples=intermediates,
        wall_ns=time.perf_counter_ns() - t0,
        peak_rows_materialized=sum(_rows(b) for b in rel.values()),
    )
    return res, metrics, trace


def _check(deadline) -> None:
    if deadline is not None and time.perf_counter_ns() > deadline:
        raise QueryTimeout("query exceeded its time limit")


def _needed_columns(q, ctx: JoinContext, catalog: Catalog) -> set[str]:
    need = {str(c) for c in tail_columns(q.tail)}
    for p in q.predicates:
        need |= {str(c) for c in p.columns()}
    if not q.tail:
        for n in ctx.units:
            need |= {f"{n.leaf.alias}.{c}" for c in catalog.table_def(n.leaf.table).column_names}
    return need


def _union(outputs: list[Batch], ctx: JoinContext, rel: dict[int, Batch], order: list[int]) -> Batch:
    cols: list[str] = []
    for i in order:
        cols += list(rel[i])
    if not outputs:
        return {c: rel[i][c][:0] for i in order for c in rel[i]}
    return {c: np.concatenate([o[c] for o in outputs]) for c in cols}
