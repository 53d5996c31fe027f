"""Foreign-key DAG splitting.

Vertices are relation instances; each equi-join predicate becomes an edge
from the foreign-key side to the referenced key side. A vertex referenced by
two or more others is a split point. Removing the split points leaves
components; every component holding a relation that points into a split
point becomes one sub-plan. The split-point relations, and components that
only hang off them, join in the final assembly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .cardinality import CardinalityModel, Estimate, _merge_source
from .catalog import Catalog
from .plan import ColEqCol, CrossProduct, LogicalPlan, Node, PlanError, Predicate, Scan, SpjQuery, decompose


class NotOrientable(PlanError):
    """A join predicate that does not follow a declared foreign key."""


@dataclass
class JoinDAG:
    vertices: list[str]
    edges: list[tuple[str, str, ColEqCol]]  # (fk side, pk side, predicate)
    filters: dict[str, tuple[Predicate, ...]]
    query: SpjQuery

    def in_degree(self, v: str) -> int:
        return sum(1 for _, to, _ in self.edges if to == v)

    def out_edges(self, v: str) -> list[tuple[str, str, ColEqCol]]:
        return [e for e in self.edges if e[0] == v]

    def neighbors(self, v: str) -> set[str]:
        out = set()
        for a, b, _ in self.edges:
            if a == v:
                out.add(b)
            elif b == v:
                out.add(a)
        return out


@dataclass
class DagSubPlan:
    id: int
    center: str
    aliases: tuple[str, ...]
    estimate: Estimate

    @property
    def label(self) -> str:
        return ",".join(self.aliases)


@dataclass
class DagSplit:
    split_points: list[str]
    subplans: list[DagSubPlan]
    deferred: list[str] = field(default_factory=list)
    cannot_split: bool = False


def _orient(p: ColEqCol, tables: dict[str, str], catalog: Catalog) -> tuple[str, str]:
    def refs(src, dst) -> bool:
        fk = catalog.foreign_key(tables[src.alias], src.column)
        return fk == (tables[dst.alias], dst.column)

    if refs(p.left, p.right):
        return p.left.alias, p.right.alias
    if refs(p.right, p.left):
        return p.right.alias, p.left.alias
    raise NotOrientable(f"join predicate {p} does not follow a foreign key")


def build_dag(plan: LogicalPlan | Node | SpjQuery, catalog: Catalog) -> JoinDAG:
    q = plan if isinstance(plan, SpjQuery) else decompose(plan)
    tables: dict[str, str] = {}
    filters: dict[str, tuple[Predicate, ...]] = {}
    for u in q.units:
        if not isinstance(u.leaf, Scan):
            raise NotOrientable("intermediate results carry no foreign keys")
        tables[u.leaf.alias] = u.leaf.table
        filters[u.leaf.alias] = tuple(u.filters)
    edges = []
    for p in q.predicates:
        src, dst = _orient(p, tables, catalog)
        edges.append((src, dst, p))
    return JoinDAG(sorted(tables), edges, filters, q)


def find_split_points(dag: JoinDAG) -> list[str]:
    return [v for v in dag.vertices if dag.in_degree(v) >= 2]


def _components(dag: JoinDAG, removed: set[str]) -> list[list[str]]:
    seen: set[str] = set()
    comps = []
    for v in dag.vertices:
        if v in removed or v in seen:
            continue
        comp, stack = [], [v]
        seen.add(v)
        while stack:
            x = stack.pop()
            comp.append(x)
            for y in sorted(dag.neighbors(x)):
                if y not in removed and y not in seen:
                    seen.add(y)
                    stack.append(y)
        comps.append(sorted(comp))
    return comps


def subquery(q: SpjQuery, aliases) -> SpjQuery:
    """The units of ``q`` covering ``aliases`` with the predicates among them."""
    aliases = set(aliases)
    units = [u for u in q.units if u.aliases <= aliases]
    preds = [p for p in q.predicates if p.aliases <= aliases]
    return SpjQuery(units, preds)


def estimate_subquery(q: SpjQuery, model: CardinalityModel) -> Estimate:
    ests = [model.unit(u) for u in q.units]
    preds = [(q.unit_of(p.left.alias), str(p.left), q.unit_of(p.right.alias), str(p.right)) for p in q.predicates]
    return Estimate(model.join_rows(ests, preds), _merge_source(e.source for e in ests))


def split(dag: JoinDAG, model: CardinalityModel) -> DagSplit:
    """Sub-plans in execution order (ascending estimate, ties by alias)."""
    points = find_split_points(dag)
    if not points:
        whole = DagSubPlan(1, "", tuple(dag.vertices), estimate_subquery(dag.query, model))
        return DagSplit([], [whole], cannot_split=True)
    removed = set(points)
    subplans, deferred = [], []
    for comp in _components(dag, removed):
        centers = sorted({a for a, b, _ in dag.edges if a in comp and b in removed})
        if not centers:
            deferred.extend(comp)
            continue
        est = estimate_subquery(subquery(dag.query, comp), model)
        subplans.append(DagSubPlan(0, centers[0], tuple(comp), est))
    subplans.sort(key=lambda s: (s.estimate.rows, s.label))
    for i, s in enumerate(subplans, start=1):
        s.id = i
    return DagSplit(points, subplans, sorted(deferred))


def fragment_plan(q: SpjQuery, aliases) -> LogicalPlan:
    """Self-contained logical plan for a subset of relation instances."""
    sub = subquery(q, aliases)
    root: Node | None = None
    for u in sub.units:
        root = u.node() if root is None else CrossProduct(root, u.node())
    return LogicalPlan(root, tuple(sub.predicates))


def explain_split(dag: JoinDAG, result: DagSplit) -> str:
    lines = ["strategy: dag", "edges:"]
    for a, b, p in dag.edges:
        lines.append(f"  {a} -> {b}  ({p})")
    lines.append(f"split points: [{', '.join(result.split_points)}]")
    if result.cannot_split:
        lines.append("CannotSplit: no relation is referenced by two or more others")
    for s in result.subplans:
        lines.append(f"  #{s.id} center={s.center or '-'} [{', '.join(s.aliases)}] est={s.estimate.rows:.0f}")
    if result.deferred:
        lines.append(f"deferred to assembly: [{', '.join(result.deferred)}]")
    return "\n".join(lines)
