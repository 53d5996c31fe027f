"""Logical plan model: column references, predicates and operator nodes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Union


class PlanError(Exception):
    """Malformed or unsupported plan."""


@dataclass(frozen=True, order=True)
class ColumnRef:
    alias: str
    column: str

    def __str__(self) -> str:
        return f"{self.alias}.{self.column}"

    @classmethod
    def parse(cls, text: str) -> "ColumnRef":
        alias, dot, col = text.partition(".")
        if not dot or not alias or not col:
            raise PlanError(f"column reference must be alias.column, got {text!r}")
        return cls(alias, col)


# -- predicates -------------------------------------------------------------

CMP_OPS = ("<", "<=", ">", ">=", "!=")


@dataclass(frozen=True)
class ColEqLiteral:
    column: ColumnRef
    value: int | str

    @property
    def aliases(self) -> frozenset[str]:
        return frozenset({self.column.alias})

    def columns(self) -> tuple[ColumnRef, ...]:
        return (self.column,)

    def __str__(self) -> str:
        return f"{self.column} = {_lit(self.value)}"


@dataclass(frozen=True)
class ColCmpLiteral:
    column: ColumnRef
    op: str
    value: int | str

    def __post_init__(self):
        if self.op not in CMP_OPS:
            raise PlanError(f"unknown comparison operator {self.op!r}")

    @property
    def aliases(self) -> frozenset[str]:
        return frozenset({self.column.alias})

    def columns(self) -> tuple[ColumnRef, ...]:
        return (self.column,)

    def __str__(self) -> str:
        return f"{self.column} {self.op} {_lit(self.value)}"


@dataclass(frozen=True)
class ColPrefix:
    column: ColumnRef
    prefix: str

    @property
    def aliases(self) -> frozenset[str]:
        return frozenset({self.column.alias})

    def columns(self) -> tuple[ColumnRef, ...]:
        return (self.column,)

    def __str__(self) -> str:
        return f"{self.column} LIKE '{self.prefix}%'"


@dataclass(frozen=True)
class ColEqCol:
    """Equi-join predicate between two distinct relation instances."""

    left: ColumnRef
    right: ColumnRef

    def __post_init__(self):
        if self.left.alias == self.right.alias:
            raise PlanError(f"join predicate {self.left} = {self.right} must span two relations")

    @property
    def aliases(self) -> frozenset[str]:
        return frozenset({self.left.alias, self.right.alias})

    def columns(self) -> tuple[ColumnRef, ...]:
        return (self.left, self.right)

    def side(self, aliases: frozenset[str]) -> ColumnRef:
        """The column of this predicate that belongs to ``aliases``."""
        if self.left.alias in aliases:
            return self.left
        if self.right.alias in aliases:
            return self.right
        raise PlanError(f"{self} does not touch {sorted(aliases)}")

    def __str__(self) -> str:
        return f"{self.left} = {self.right}"


Predicate = Union[ColEqLiteral, ColCmpLiteral, ColPrefix, ColEqCol]


def _lit(v) -> str:
    return f"'{v}'" if isinstance(v, str) else str(v)


# -- nodes -----------------------------------------------------------------


@dataclass(frozen=True)
class Scan:
    table: str
    alias: str

    @property
    def children(self) -> tuple:
        return ()


@dataclass(frozen=True)
class MaterializedScan:
    id: int
    columns: tuple[str, ...]

    @property
    def children(self) -> tuple:
        return ()

    @property
    def covers(self) -> frozenset[str]:
        return frozenset(c.split(".", 1)[0] for c in self.columns)


@dataclass(frozen=True)
class Filter:
    predicates: tuple[Predicate, ...]
    child: "Node"

    @property
    def children(self) -> tuple:
        return (self.child,)


@dataclass(frozen=True)
class Join:
    predicates: tuple[ColEqCol, ...]
    left: "Node"
    right: "Node"

    @property
    def children(self) -> tuple:
        return (self.left, self.right)


@dataclass(frozen=True)
class CrossProduct:
    left: "Node"
    right: "Node"

    @property
    def children(self) -> tuple:
        return (self.left, self.right)


@dataclass(frozen=True)
class Project:
    columns: tuple[ColumnRef, ...]
    child: "Node"

    @property
    def children(self) -> tuple:
        return (self.child,)


AGG_FUNCS = ("COUNT", "SUM", "MIN", "MAX")


@dataclass(frozen=True)
class AggregateCall:
    func: str
    column: ColumnRef | None = None  # None means COUNT(*)

    def __post_init__(self):
        if self.func not in AGG_FUNCS:
            raise PlanError(f"unknown aggregate {self.func!r}")
        if self.column is None and self.func != "COUNT":
            raise PlanError(f"{self.func} needs a column argument")

    def __str__(self) -> str:
        return f"{self.func}({self.column if self.column else '*'})"


@dataclass(frozen=True)
class Aggregate:
    group_by: tuple[ColumnRef, ...]
    aggregates: tuple[AggregateCall, ...]
    child: "Node"

    @property
    def children(self) -> tuple:
        return (self.child,)


Node = Union[Scan, MaterializedScan, Filter, Join, CrossProduct, Project, Aggregate]
LEAF_TYPES = (Scan, MaterializedScan)
TAIL_TYPES = (Project, Aggregate)


@dataclass(frozen=True)
class LogicalPlan:
    """Operator tree plus the join predicates still waiting for an optimizer."""

    root: Node
    join_predicates: tuple[ColEqCol, ...] = ()


def walk(node: Node) -> Iterator[Node]:
    """Pre-order traversal."""
    yield node
    for c in node.children:
        yield from walk(c)


def aliases_of(node: Node) -> frozenset[str]:
    out: set[str] = set()
    for n in walk(node):
        if isinstance(n, Scan):
            out.add(n.alias)
        elif isinstance(n, MaterializedScan):
            out |= n.covers
    return frozenset(out)


# -- relation units ----------------------------------------------------------


@dataclass(frozen=True)
class Unit:
    """A leaf relation (base scan or intermediate) with its local filters."""

    leaf: Scan | MaterializedScan
    filters: tuple[Predicate, ...] = ()

    @property
    def aliases(self) -> frozenset[str]:
        if isinstance(self.leaf, Scan):
            return frozenset({self.leaf.alias})
        return self.leaf.covers

    @property
    def label(self) -> str:
        """Deterministic tie-break key."""
        return ",".join(sorted(self.aliases))

    def node(self) -> Node:
        if self.filters:
            return Filter(self.filters, self.leaf)
        return self.leaf


@dataclass
class SpjQuery:
    """A plan decomposed into its SPJ region and its non-SPJ tail.

    ``tail`` lists the Project/Aggregate operators from the top down, each
    stored with a placeholder child.
    """

    units: list[Unit]
    predicates: list[ColEqCol]
    tail: list[Node] = field(default_factory=list)

    @property
    def aliases(self) -> frozenset[str]:
        out: frozenset[str] = frozenset()
        for u in self.units:
            out |= u.aliases
        return out

    def unit_of(self, alias: str) -> int:
        for i, u in enumerate(self.units):
            if alias in u.aliases:
                return i
        raise PlanError(f"no relation instance {alias!r} in scope")


_PLACEHOLDER = Scan("__child__", "__child__")


def decompose(plan: LogicalPlan | Node) -> SpjQuery:
    """Split a plan into relation units, join predicates and the tail."""
    if isinstance(plan, LogicalPlan):
        root, pending = plan.root, list(plan.join_predicates)
    else:
        root, pending = plan, []
    tail: list[Node] = []
    node = root
    while isinstance(node, TAIL_TYPES):
        if isinstance(node, Project):
            tail.append(Project(node.columns, _PLACEHOLDER))
        else:
            tail.append(Aggregate(node.group_by, node.aggregates, _PLACEHOLDER))
        node = node.child
    units: list[Unit] = []
    preds: list[ColEqCol] = list(pending)
    floating: list[Predicate] = []

    def visit(n: Node) -> None:
        if isinstance(n, LEAF_TYPES):
            units.append(Unit(n))
        elif isinstance(n, Filter) and isinstance(n.child, LEAF_TYPES):
            units.append(Unit(n.child, tuple(n.predicates)))
        elif isinstance(n, Filter):
            floating.extend(n.predicates)
            visit(n.child)
        elif isinstance(n, Join):
            preds.extend(n.predicates)
            visit(n.left)
            visit(n.right)
        elif isinstance(n, CrossProduct):
            visit(n.left)
            visit(n.right)
        else:
            raise PlanError(f"{type(n).__name__} below a join is not supported")

    visit(node)
    for p in floating:
        if isinstance(p, ColEqCol):
            preds.append(p)
            continue
        # single-relation predicate above a join: push it to its unit
        (alias,) = p.aliases
        idx = next((i for i, u in enumerate(units) if alias in u.aliases), None)
        if idx is None:
            raise PlanError(f"predicate {p} references unknown relation {alias!r}")
        u = units[idx]
        units[idx] = Unit(u.leaf, u.filters + (p,))
    seen: set[str] = set()
    for u in units:
        if u.aliases & seen:
            raise PlanError(f"relation instance(s) {sorted(u.aliases & seen)} appear twice")
        seen |= u.aliases
    for p in preds:
        if not p.aliases <= seen:
            raise PlanError(f"join predicate {p} references a relation not in scope")
    return SpjQuery(units, preds, tail)


def attach_tail(tail: list[Node], child: Node) -> Node:
    node = child
    for t in reversed(tail):
        if isinstance(t, Project):
            node = Project(t.columns, node)
        else:
            node = Aggregate(t.group_by, t.aggregates, node)
    return node


def tail_columns(tail: list[Node]) -> set[ColumnRef]:
    """Columns the tail reads from the SPJ region."""
    if not tail:
        return set()
    bottom = tail[-1]
    if isinstance(bottom, Project):
        return set(bottom.columns)
    cols = set(bottom.group_by)
    cols |= {a.column for a in bottom.aggregates if a.column is not None}
    return cols
