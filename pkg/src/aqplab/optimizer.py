"""Join ordering and physical planning.

Cost is Cout: the sum of estimated output cardinalities over all join
nodes. Up to ``DP_LIMIT`` relation units are ordered by exact dynamic
programming over connected subsets (bushy trees); larger inputs use a greedy
smallest-next-join heuristic. Cross products appear only between connected
components of the join graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

from .cardinality import FALLBACK, CardinalityModel, Estimate, UnitEstimate, _merge_source
from .catalog import Catalog
from .plan import (
    Aggregate,
    AggregateCall,
    ColEqCol,
    ColumnRef,
    CrossProduct,
    Join,
    LogicalPlan,
    MaterializedScan,
    Node,
    PlanError,
    Predicate,
    Project,
    Scan,
    SpjQuery,
    attach_tail,
    decompose,
)

DP_LIMIT = 10

# A join tree over unit indices: an int leaf or a (left, right) pair.
JoinTree = Union[int, tuple]


# -- physical plan -----------------------------------------------------------


@dataclass(eq=False)
class PhysNode:
    est: Estimate = field(default_factory=lambda: Estimate(0.0), kw_only=True)
    actual: int | None = field(default=None, kw_only=True)

    @property
    def children(self) -> tuple["PhysNode", ...]:
        return ()

    @property
    def kind(self) -> str:
        return type(self).__name__


@dataclass(eq=False)
class TableScan(PhysNode):
    table: str
    alias: str
    columns: tuple[str, ...] = ()  # unqualified


@dataclass(eq=False)
class MaterializedScanExec(PhysNode):
    id: int
    columns: tuple[str, ...] = ()  # qualified

    @property
    def kind(self) -> str:
        return "MaterializedScan"


@dataclass(eq=False)
class FilterExec(PhysNode):
    predicates: tuple[Predicate, ...]
    child: PhysNode

    @property
    def children(self):
        return (self.child,)


@dataclass(eq=False)
class HashJoin(PhysNode):
    """Equi-join; ``keys`` pairs a build-side column with a probe-side column."""

    build: PhysNode
    probe: PhysNode
    keys: tuple[tuple[ColumnRef, ColumnRef], ...]

    @property
    def children(self):
        return (self.probe, self.build)


@dataclass(eq=False)
class CrossProductExec(PhysNode):
    left: PhysNode
    right: PhysNode

    @property
    def children(self):
        return (self.left, self.right)


@dataclass(eq=False)
class ProjectExec(PhysNode):
    columns: tuple[ColumnRef, ...]
    child: PhysNode

    @property
    def children(self):
        return (self.child,)


@dataclass(eq=False)
class AggregateExec(PhysNode):
    group_by: tuple[ColumnRef, ...]
    aggregates: tuple[AggregateCall, ...]
    child: PhysNode

    @property
    def children(self):
        return (self.child,)


@dataclass
class PhysicalPlan:
    root: PhysNode
    cost: float = 0.0


def iter_nodes(node: PhysNode) -> Iterator[PhysNode]:
    yield node
    for c in node.children:
        yield from iter_nodes(c)


def leaf_aliases(node: PhysNode) -> frozenset[str]:
    out: set[str] = set()
    for n in iter_nodes(node):
        if isinstance(n, TableScan):
            out.add(n.alias)
        elif isinstance(n, MaterializedScanExec):
            out |= {c.split(".", 1)[0] for c in n.columns}
    return frozenset(out)


def join_tree(node: PhysNode):
    """Join tree shape as nested lists of aliases, children in canonical order.

    Filters and tail operators are transparent; a leaf is its alias (or the
    sorted alias list of an intermediate).
    """
    if isinstance(node, (HashJoin, CrossProductExec)):
        kids = [join_tree(c) for c in node.children]
        kids.sort(key=_tree_key)
        return kids
    if isinstance(node, TableScan):
        return node.alias
    if isinstance(node, MaterializedScanExec):
        return "+".join(sorted(leaf_aliases(node)))
    (child,) = node.children
    return join_tree(child)


def _tree_key(t) -> str:
    if isinstance(t, str):
        return t
    return "(" + " ".join(_tree_key(c) for c in t) + ")"


def explain(node: PhysNode | PhysicalPlan) -> str:
    """One line per node, indented by depth, with estimate and actual rows."""
    if isinstance(node, PhysicalPlan):
        node = node.root
    lines: list[str] = []

    def fmt(n: PhysNode, depth: int) -> None:
        if isinstance(n, TableScan):
            detail = f" {n.table} AS {n.alias}"
        elif isinstance(n, MaterializedScanExec):
            detail = f" #{n.id} [{','.join(sorted(leaf_aliases(n)))}]"
        elif isinstance(n, FilterExec):
            detail = " " + " AND ".join(str(p) for p in n.predicates)
        elif isinstance(n, HashJoin):
            detail = " " + " AND ".join(f"{b} = {p}" for b, p in n.keys)
        elif isinstance(n, ProjectExec):
            detail = " " + ", ".join(str(c) for c in n.columns)
        elif isinstance(n, AggregateExec):
            detail = " " + ", ".join([str(c) for c in n.group_by] + [str(a) for a in n.aggregates])
        else:
            detail = ""
        act = "" if n.actual is None else f" act={n.actual}"
        lines.append(f"{'  ' * depth}{n.kind}{detail} est={n.est.rows:.0f}{act}")
        if isinstance(n, HashJoin):
            fmt(n.probe, depth + 1)
            fmt(n.build, depth + 1)
        else:
            for c in n.children:
                fmt(c, depth + 1)

    fmt(node, 0)
    return "\n".join(lines)


# -- join graph context ------------------------------------------------------


class JoinContext:
    """Estimates and connectivity for one SPJ region, addressed by bitmask.

    Units are sorted by alias label so that bit order is lexicographic
    order, which makes every tie-break deterministic.
    """

    def __init__(self, query: SpjQuery, model: CardinalityModel):
        order = sorted(range(len(query.units)), key=lambda i: query.units[i].label)
        self.units = [query.units[i] for i in order]
        self.labels = [u.label for u in self.units]
        self.model = model
        self.est: list[UnitEstimate] = [model.unit(u) for u in self.units]
        self.n = len(self.units)
        owner = {}
        for i, u in enumerate(self.units):
            for a in u.aliases:
                owner[a] = i
        self.owner = owner
        self.preds: list[tuple[int, str, int, str, ColEqCol]] = []
        self.adj = [0] * self.n
        for p in query.predicates:
            i, j = owner[p.left.alias], owner[p.right.alias]
            if i == j:
                raise PlanError(f"join predicate {p} is internal to one relation unit")
            self.preds.append((i, str(p.left), j, str(p.right), p))
            self.adj[i] |= 1 << j
            self.adj[j] |= 1 << i
        self._card: dict[int, float] = {}
        self.full = (1 << self.n) - 1

    def bits(self, mask: int) -> list[int]:
        return [i for i in range(self.n) if mask >> i & 1]

    def card(self, mask: int) -> float:
        c = self._card.get(mask)
        if c is None:
            idx = self.bits(mask)
            local = {g: k for k, g in enumerate(idx)}
            preds = [
                (local[i], ci, local[j], cj) for i, ci, j, cj, _ in self.preds if i in local and j in local
            ]
            c = self.model.join_rows([self.est[i] for i in idx], preds)
            self._card[mask] = c
        return c

    def source(self, mask: int) -> str:
        return _merge_source(self.est[i].source for i in self.bits(mask))

    def neighbors(self, mask: int) -> int:
        out = 0
        for i in self.bits(mask):
            out |= self.adj[i]
        return out & ~mask

    def connected(self, mask: int) -> bool:
        if mask == 0:
            return False
        seen = mask & -mask
        frontier = seen
        while frontier:
            nxt = 0
            for i in self.bits(frontier):
                nxt |= self.adj[i]
            nxt &= mask & ~seen
            seen |= nxt
            frontier = nxt
        return seen == mask

    def components(self) -> list[int]:
        left = self.full
        comps = []
        while left:
            seed = left & -left
            comp = seed
            frontier = seed
            while frontier:
                nxt = 0
                for i in self.bits(frontier):
                    nxt |= self.adj[i]
                nxt &= ~comp
                comp |= nxt
                frontier = nxt
            comps.append(comp)
            left &= ~comp
        return comps

    def preds_between(self, a: int, b: int) -> list[ColEqCol]:
        return [p for i, _, j, _, p in self.preds if (a >> i & 1 and b >> j & 1) or (a >> j & 1 and b >> i & 1)]

    def tree_mask(self, tree: JoinTree) -> int:
        if isinstance(tree, int):
            return 1 << tree
        return self.tree_mask(tree[0]) | self.tree_mask(tree[1])

    def cout(self, tree: JoinTree) -> float:
        """Cout of a join tree: cost(l) + cost(r) + card(l join r)."""
        if isinstance(tree, int):
            return 0.0
        return self.cout(tree[0]) + self.cout(tree[1]) + self.card(self.tree_mask(tree))

    def signature(self, tree: JoinTree) -> str:
        if isinstance(tree, int):
            return self.labels[tree]
        return "(" + self.signature(tree[0]) + " " + self.signature(tree[1]) + ")"


def _better(cost: float, sig: str, best: tuple | None) -> bool:
    if best is None:
        return True
    if cost != best[0]:
        return cost < best[0]
    return sig < best[2]


def dp_order(ctx: JoinContext, mask: int) -> tuple[float, JoinTree]:
    """Exact Cout-optimal bushy tree over a connected ``mask``."""
    best: dict[int, tuple[float, JoinTree, str]] = {}
    for i in ctx.bits(mask):
        best[1 << i] = (0.0, i, ctx.labels[i])
    members = ctx.bits(mask)
    subsets = [0]
    for i in members:
        subsets += [s | 1 << i for s in subsets]
    subsets = [s for s in subsets if bin(s).count("1") >= 2 and ctx.connected(s)]
    subsets.sort(key=lambda s: (bin(s).count("1"), s))
    for s in subsets:
        low = s & -s
        rest_bits = s ^ low
        entry = None
        sub = rest_bits
        # enumerate submasks that contain the lowest bit, so each split is seen once
        while True:
            left = sub | low
            right = s ^ left
            if right and left in best and right in best and ctx.neighbors(left) & right:
                lc, lt, ls = best[left]
                rc, rt, rs = best[right]
                cost = lc + rc + ctx.card(s)
                sig = "(" + ls + " " + rs + ")"
                if _better(cost, sig, entry):
                    entry = (cost, (lt, rt), sig)
            if sub == 0:
                break
            sub = (sub - 1) & rest_bits
        if entry is not None:
            best[s] = entry
    cost, tree, _ = best[mask]
    return cost, tree


def greedy_order(ctx: JoinContext, mask: int) -> tuple[float, JoinTree]:
    """Repeatedly join the connected pair with the smallest estimated output."""
    parts: list[tuple[int, JoinTree]] = [(1 << i, i) for i in ctx.bits(mask)]
    while len(parts) > 1:
        pick = None
        for a in range(len(parts)):
            for b in range(a + 1, len(parts)):
                ma, mb = parts[a][0], parts[b][0]
                if not ctx.neighbors(ma) & mb:
                    continue
                key = (ctx.card(ma | mb), ctx.signature(parts[a][1]), ctx.signature(parts[b][1]))
                if pick is None or key < pick[0]:
                    pick = (key, a, b)
        if pick is None:
            raise PlanError("greedy_order called on a disconnected subset")
        _, a, b = pick
        merged = (parts[a][0] | parts[b][0], (parts[a][1], parts[b][1]))
        parts = [p for k, p in enumerate(parts) if k not in (a, b)] + [merged]
    tree = parts[0][1]
    return ctx.cout(tree), tree


def order_joins(ctx: JoinContext) -> tuple[float, JoinTree]:
    """Cout-minimal join tree, with cross products only between components."""
    comps = []
    for comp in ctx.components():
        if bin(comp).count("1") <= DP_LIMIT:
            cost, tree = dp_order(ctx, comp)
        else:
            cost, tree = greedy_order(ctx, comp)
        comps.append((ctx.card(comp), ctx.signature(tree), comp, tree))
    comps.sort(key=lambda c: (c[0], c[1]))
    tree = comps[0][3]
    for c in comps[1:]:
        tree = (tree, c[3])
    return ctx.cout(tree), tree


# -- physical construction ---------------------------------------------------


class _Builder:
    def __init__(self, ctx: JoinContext, catalog: Catalog):
        self.ctx = ctx
        self.catalog = catalog

    def leaf(self, i: int) -> PhysNode:
        unit = self.ctx.units[i]
        est = self.ctx.est[i]
        leaf = unit.leaf
        if isinstance(leaf, Scan):
            cols = tuple(self.catalog.table_def(leaf.table).column_names)
            if unit.filters:
                base_stats = self.catalog.table(leaf.table).stats
                scan_est = Estimate(float(base_stats.row_count) if base_stats else est.rows, est.source)
                node: PhysNode = TableScan(leaf.table, leaf.alias, cols, est=scan_est)
            else:
                node = TableScan(leaf.table, leaf.alias, cols, est=Estimate(est.rows, est.source))
        else:
            scan_est = Estimate(est.rows, est.source)
            if unit.filters:
                bare = self.ctx.model.unit(type(unit)(leaf))
                scan_est = Estimate(bare.rows, bare.source)
            node = MaterializedScanExec(leaf.id, tuple(leaf.columns), est=scan_est)
        if unit.filters:
            node = FilterExec(tuple(unit.filters), node, est=Estimate(est.rows, est.source))
        return node

    def build(self, tree: JoinTree) -> PhysNode:
        if isinstance(tree, int):
            return self.leaf(tree)
        lt, rt = tree
        left, right = self.build(lt), self.build(rt)
        lm, rm = self.ctx.tree_mask(lt), self.ctx.tree_mask(rt)
        mask = lm | rm
        est = Estimate(self.ctx.card(mask), self.ctx.source(mask))
        preds = self.ctx.preds_between(lm, rm)
        if not preds:
            return CrossProductExec(left, right, est=est)
        # build on the smaller input; ties build on the right
        if left.est.rows < right.est.rows:
            build, probe, bm = left, right, lm
        else:
            build, probe, bm = right, left, rm
        build_aliases = {a for i in self.ctx.bits(bm) for a in self.ctx.units[i].aliases}
        keys = []
        for p in preds:
            if p.left.alias in build_aliases:
                keys.append((p.left, p.right))
            else:
                keys.append((p.right, p.left))
        return HashJoin(build, probe, tuple(keys), est=est)


def _tail(tail: list[Node], child: PhysNode) -> PhysNode:
    node = child
    for t in reversed(tail):
        est = Estimate(node.est.rows, FALLBACK)
        if isinstance(t, Project):
            node = ProjectExec(t.columns, node, est=est)
        else:
            assert isinstance(t, Aggregate)
            if not t.group_by:
                est = Estimate(1.0, node.est.source)
            node = AggregateExec(t.group_by, t.aggregates, node, est=est)
    return node


def prune_columns(node: PhysNode, required: set[str]) -> None:
    """Restrict scans to the columns some ancestor reads."""
    if isinstance(node, TableScan):
        all_cols = node.columns
        keep = tuple(c for c in all_cols if f"{node.alias}.{c}" in required)
        # a scan with no columns would lose its row count
        node.columns = keep or all_cols[:1]
    elif isinstance(node, MaterializedScanExec):
        node.columns = tuple(c for c in node.columns if c in required) or node.columns[:1]
    elif isinstance(node, FilterExec):
        need = required | {str(c) for p in node.predicates for c in p.columns()}
        prune_columns(node.child, need)
    elif isinstance(node, HashJoin):
        need = required | {str(c) for k in node.keys for c in k}
        prune_columns(node.build, need)
        prune_columns(node.probe, need)
    elif isinstance(node, CrossProductExec):
        prune_columns(node.left, required)
        prune_columns(node.right, required)
    elif isinstance(node, ProjectExec):
        prune_columns(node.child, {str(c) for c in node.columns})
    elif isinstance(node, AggregateExec):
        need = {str(c) for c in node.group_by} | {str(a.column) for a in node.aggregates if a.column}
        prune_columns(node.child, need)


def _finish(q: SpjQuery, ctx: JoinContext, tree: JoinTree, catalog: Catalog, output_columns) -> PhysicalPlan:
    spj = _Builder(ctx, catalog).build(tree)
    root = _tail(q.tail, spj)
    if q.tail:
        prune_columns(root, set())
    else:
        if output_columns is None:
            required = {str(c) for c in _all_columns(q, catalog)}
        else:
            required = {str(c) for c in output_columns}
        prune_columns(root, required)
    return PhysicalPlan(root, ctx.cout(tree))


def _all_columns(q: SpjQuery, catalog: Catalog) -> list[ColumnRef]:
    out = []
    for u in q.units:
        if isinstance(u.leaf, Scan):
            out += [ColumnRef(u.leaf.alias, c) for c in catalog.table_def(u.leaf.table).column_names]
        else:
            out += [ColumnRef.parse(c) for c in u.leaf.columns]
    return out


def optimize(
    plan: LogicalPlan | Node | SpjQuery,
    catalog: Catalog,
    model: CardinalityModel | None = None,
    output_columns: Sequence[ColumnRef] | None = None,
) -> PhysicalPlan:
    """Cout-optimal physical plan for ``plan``.

    ``output_columns`` limits what a tail-less fragment must produce; by
    default every column of every relation is kept.
    """
    model = model or CardinalityModel(catalog)
    q = plan if isinstance(plan, SpjQuery) else decompose(plan)
    ctx = JoinContext(q, model)
    _, tree = order_joins(ctx)
    return _finish(q, ctx, tree, catalog, output_columns)


def optimize_with_fixed_order(
    plan: LogicalPlan | Node | SpjQuery,
    order,
    catalog: Catalog,
    model: CardinalityModel | None = None,
    output_columns: Sequence[ColumnRef] | None = None,
) -> PhysicalPlan:
    """Physical plan whose join tree is exactly ``order``.

    ``order`` is a nested list whose leaves are aliases (or ``a+b`` labels of
    intermediates). Only build/probe sides are chosen, by estimated size.
    """
    model = model or CardinalityModel(catalog)
    q = plan if isinstance(plan, SpjQuery) else decompose(plan)
    ctx = JoinContext(q, model)
    index = {"+".join(sorted(u.aliases)): i for i, u in enumerate(ctx.units)}
    used: list[int] = []

    def convert(t) -> JoinTree:
        if isinstance(t, str):
            if t not in index:
                raise PlanError(f"order names unknown relation {t!r}")
            used.append(index[t])
            return index[t]
        if len(t) != 2:
            raise PlanError(f"order node must have two children, got {len(t)}")
        return (convert(t[0]), convert(t[1]))

    tree = convert(order)
    if sorted(used) != list(range(ctx.n)):
        missing = sorted(set(index) - {ctx.labels[i] for i in used})
        raise PlanError(f"order does not cover the plan's relations exactly (missing {missing})")
    return _finish(q, ctx, tree, catalog, output_columns)


def enumerate_join_trees(ctx: JoinContext, mask: int | None = None, cross_products: bool = False):
    """Every join tree over ``mask`` (ordered children); reference oracle for tests."""
    mask = ctx.full if mask is None else mask
    bits = ctx.bits(mask)
    if len(bits) == 1:
        yield bits[0]
        return
    sub = (mask - 1) & mask
    while sub:
        rest = mask ^ sub
        if cross_products or (ctx.neighbors(sub) & rest):
            for lt in enumerate_join_trees(ctx, sub, cross_products):
                for rt in enumerate_join_trees(ctx, rest, cross_products):
                    yield (lt, rt)
        sub = (sub - 1) & mask


# -- logical trees -----------------------------------------------------------


def tree_to_logical(ctx: JoinContext, tree: JoinTree) -> Node:
    """Logical Join/CrossProduct tree over the context's units."""
    if isinstance(tree, int):
        return ctx.units[tree].node()
    lt, rt = tree
    preds = ctx.preds_between(ctx.tree_mask(lt), ctx.tree_mask(rt))
    left, right = tree_to_logical(ctx, lt), tree_to_logical(ctx, rt)
    if not preds:
        return CrossProduct(left, right)
    return Join(tuple(preds), left, right)


def join_tree_plan(q: SpjQuery, catalog: Catalog, model: CardinalityModel | None = None) -> LogicalPlan:
    """Logical plan shaped like the Cout-optimal join order for ``q``."""
    ctx = JoinContext(q, model or CardinalityModel(catalog))
    _, tree = order_joins(ctx)
    return LogicalPlan(attach_tail(q.tail, tree_to_logical(ctx, tree)))
