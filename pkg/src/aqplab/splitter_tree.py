"""Tree splitting over a reordered join tree.

The initial skeleton is left-deep with the smallest relations joined first.
A round's candidates are the leaf-adjacent Filter and Join subtrees of the
current tree; the driver executes one, replaces it with its intermediate and
re-plans the rest.
"""

from __future__ import annotations

from dataclasses import dataclass

from .cardinality import CardinalityModel, Estimate
from .catalog import Catalog
from .plan import (
    CrossProduct,
    Filter,
    Join,
    LEAF_TYPES,
    LogicalPlan,
    MaterializedScan,
    Node,
    Scan,
    TAIL_TYPES,
    Unit,
    aliases_of,
    attach_tail,
    decompose,
)


@dataclass
class SubPlan:
    id: int
    fragment: LogicalPlan
    root_kind: str  # "Filter" or "Join"
    estimated_rows: Estimate
    depth: int = 0

    @property
    def aliases(self) -> frozenset[str]:
        return aliases_of(self.fragment.root)

    @property
    def label(self) -> str:
        return ",".join(sorted(self.aliases))


def _base_rows(unit: Unit, catalog: Catalog) -> int:
    if isinstance(unit.leaf, Scan):
        return catalog.table(unit.leaf.table).row_count
    return catalog.intermediate(unit.leaf.id).exact_row_count


def reorder_joins(plan: LogicalPlan, catalog: Catalog, reorder: bool = True) -> LogicalPlan:
    """Left-deep skeleton whose deepest join pairs the two smallest relations.

    Relations are ranked by base row count (a filtered relation keeps its
    table's rank), ties by alias. With ``reorder`` off the FROM order is
    kept. Either way a relation with no join predicate to the relations
    below it is postponed until one connects, so cross products only remain
    between disconnected parts of the query.
    """
    q = decompose(plan)
    ranked = list(q.units)
    if reorder:
        ranked.sort(key=lambda u: (_base_rows(u, catalog), u.label))
    seq: list[Unit] = []
    covered: set[str] = set()
    pending = ranked
    while pending:
        pick = 0
        if seq:
            for i, u in enumerate(pending):
                if any(p.aliases & u.aliases and p.aliases & covered for p in q.predicates):
                    pick = i
                    break
        u = pending.pop(pick)
        seq.append(u)
        covered |= u.aliases
    node: Node = seq[0].node()
    below = set(seq[0].aliases)
    for u in seq[1:]:
        preds = tuple(p for p in q.predicates if p.aliases <= below | u.aliases and p.aliases & u.aliases and p.aliases & below)
        node = Join(preds, node, u.node()) if preds else CrossProduct(node, u.node())
        below |= u.aliases
    return LogicalPlan(attach_tail(q.tail, node))


def _is_leaf(n: Node) -> bool:
    return isinstance(n, LEAF_TYPES) or (isinstance(n, Filter) and isinstance(n.child, LEAF_TYPES))


def split_plan(plan: LogicalPlan | Node, model: CardinalityModel) -> list[SubPlan]:
    """Leaf-adjacent Filter and Join fragments, in post-order."""
    root = plan.root if isinstance(plan, LogicalPlan) else plan
    while isinstance(root, TAIL_TYPES):
        root = root.child
    out: list[SubPlan] = []

    def visit(n: Node, depth: int) -> None:
        for c in n.children:
            visit(c, depth + 1)
        if isinstance(n, Filter) and isinstance(n.child, LEAF_TYPES):
            kind = "Filter"
        elif isinstance(n, Join) and _is_leaf(n.left) and _is_leaf(n.right):
            kind = "Join"
        else:
            return
        out.append(SubPlan(len(out) + 1, LogicalPlan(n), kind, model.estimate_node(n), depth))

    visit(root, 0)
    return out


def select_next(candidates: list[SubPlan]) -> SubPlan:
    """Least estimated output; ties go to the deeper fragment, then by alias."""
    if not candidates:
        raise ValueError("no candidate sub-plans")
    return min(candidates, key=lambda c: (c.estimated_rows.rows, -c.depth, c.label))


def first_bottom_up(candidates: list[SubPlan]) -> SubPlan:
    """Selection without a selector: the first join in post-order.

    Filters are left fused into the join above them; a filter runs alone
    only when the tree has no leaf-adjacent join.
    """
    if not candidates:
        raise ValueError("no candidate sub-plans")
    for c in candidates:
        if c.root_kind == "Join":
            return c
    return candidates[0]


def explain_split(candidates: list[SubPlan], chosen: SubPlan | None = None) -> str:
    lines = ["strategy: tree"]
    for c in candidates:
        mark = " *" if chosen is not None and c is chosen else ""
        lines.append(f"  #{c.id} root={c.root_kind} [{c.label}] depth={c.depth} est={c.estimated_rows.rows:.0f}{mark}")
    return "\n".join(lines)


def replace_fragment(plan: LogicalPlan, fragment: Node, leaf: MaterializedScan) -> Node:
    """The plan with ``fragment``'s subtree swapped for ``leaf``."""

    def sub(n: Node) -> Node:
        if n == fragment:
            return leaf
        if isinstance(n, Filter):
            return Filter(n.predicates, sub(n.child))
        if isinstance(n, Join):
            return Join(n.predicates, sub(n.left), sub(n.right))
        if isinstance(n, CrossProduct):
            return CrossProduct(sub(n.left), sub(n.right))
        if isinstance(n, TAIL_TYPES):
            return type(n)(*[getattr(n, f) for f in n.__dataclass_fields__ if f != "child"], sub(n.child))
        return n

    return sub(plan.root)
