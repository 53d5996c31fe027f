"""Selectivity and join-size estimation with an intra-query feedback path.

The estimator is deliberately textbook: independence across predicates,
uniform value ranges, and ``|L||R| / max(d_L, d_R)`` for equi-joins.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .catalog import Catalog, CatalogError, ColumnStats
from .plan import (
    Aggregate,
    ColCmpLiteral,
    ColEqCol,
    ColEqLiteral,
    ColPrefix,
    CrossProduct,
    Filter,
    Join,
    MaterializedScan,
    Node,
    Predicate,
    Project,
    Scan,
    Unit,
    decompose,
)

STATS = "Stats"
FEEDBACK = "Feedback"
FALLBACK = "Fallback"

FALLBACK_SELECTIVITY = 0.1


@dataclass(frozen=True)
class Estimate:
    rows: float
    source: str = STATS

    def __post_init__(self):
        if not self.rows >= 0:
            raise ValueError(f"negative or NaN estimate {self.rows}")


@dataclass(frozen=True)
class CardinalityFeedback:
    subject: int
    exact_row_count: int
    distinct: dict[str, int]


def estimate_selectivity(
    pred: Predicate | Sequence[Predicate],
    stats: ColumnStats | None,
    prefix_distinct: int | None = None,
) -> float:
    """Fraction of rows satisfying ``pred`` (a predicate or a conjunction).

    ``stats`` are the statistics of the relation the predicate reads; the
    column is looked up by its qualified name, then unqualified. Without stats the fixed
    fallback fraction is returned.
    """
    if not isinstance(pred, (ColEqLiteral, ColCmpLiteral, ColPrefix, ColEqCol)):
        sel = 1.0
        for p in pred:
            sel *= estimate_selectivity(p, stats, prefix_distinct if isinstance(p, ColPrefix) else None)
        return sel
    if stats is None:
        return FALLBACK_SELECTIVITY
    if isinstance(pred, ColEqCol):
        raise ValueError("join predicates are estimated with estimate_join")
    col = stats.columns.get(str(pred.column)) or stats.columns.get(pred.column.column)
    if col is None:
        return FALLBACK_SELECTIVITY
    if stats.row_count == 0:
        return 0.0
    d = max(col.distinct_count, 1)
    if isinstance(pred, ColEqLiteral):
        return 1.0 / d
    if isinstance(pred, ColPrefix):
        pd = prefix_distinct if prefix_distinct is not None else d
        return max(1.0 / max(pd, 1), 1.0 / stats.row_count)
    if pred.op == "!=":
        return 1.0 - 1.0 / d
    lo, hi, v = col.min, col.max, pred.value
    if lo is None or hi is None:
        return FALLBACK_SELECTIVITY
    width = hi - lo + 1
    if pred.op == "<":
        frac = (v - lo) / width
    elif pred.op == "<=":
        frac = (v - lo + 1) / width
    elif pred.op == ">":
        frac = (hi - v) / width
    else:
        frac = (hi - v + 1) / width
    return min(max(frac, 0.0), 1.0)


def estimate_join(left_rows: float, right_rows: float, left_key_distinct: float, right_key_distinct: float) -> float:
    return left_rows * right_rows / max(left_key_distinct, right_key_distinct, 1)


def apply_feedback(catalog: Catalog, fb: CardinalityFeedback) -> None:
    """Record exact cardinalities for an intermediate of the running query."""
    inter = catalog.intermediate(fb.subject)
    if fb.exact_row_count != inter.exact_row_count:
        raise CatalogError(
            f"feedback for {fb.subject} claims {fb.exact_row_count} rows, intermediate has {inter.exact_row_count}"
        )
    inter.feedback = fb


def feedback_for(catalog: Catalog, iid: int) -> CardinalityFeedback:
    """Build feedback from an intermediate's exact statistics."""
    inter = catalog.intermediate(iid)
    stats = inter.stats or catalog.analyze_intermediate(iid)
    return CardinalityFeedback(iid, inter.exact_row_count, {c: s.distinct_count for c, s in stats.columns.items()})


@dataclass(frozen=True)
class UnitEstimate:
    rows: float
    distinct: dict[str, float]  # qualified column -> distinct values
    source: str

    def key_distinct(self, column: str) -> float:
        return self.distinct.get(column, self.rows)


def _merge_source(sources: Iterable[str]) -> str:
    sources = set(sources)
    if FALLBACK in sources:
        return FALLBACK
    if FEEDBACK in sources:
        return FEEDBACK
    return STATS


class CardinalityModel:
    """Estimates over one catalog; feedback lives on the intermediates."""

    def __init__(self, catalog: Catalog):
        self.catalog = catalog
        self._scan_cache: dict[Unit, UnitEstimate] = {}

    # -- relation units ---------------------------------------------------
    def unit(self, unit: Unit) -> UnitEstimate:
        if isinstance(unit.leaf, Scan):
            cached = self._scan_cache.get(unit)
            if cached is None:
                cached = self._scan_cache[unit] = self._scan_unit(unit)
            return cached
        return self._materialized_unit(unit)

    def _scan_unit(self, unit: Unit) -> UnitEstimate:
        scan = unit.leaf
        table = self.catalog.table(scan.table)
        stats = table.stats
        if stats is None:
            n = table.row_count
            rows = n * FALLBACK_SELECTIVITY ** len(unit.filters)
            distinct = {f"{scan.alias}.{c}": rows for c in table.defn.column_names}
            return UnitEstimate(rows, distinct, FALLBACK)
        sel = 1.0
        for p in unit.filters:
            pd = None
            if isinstance(p, ColPrefix):
                pd = self.catalog.prefix_distinct(scan.table, p.column.column, len(p.prefix))
            sel *= estimate_selectivity(p, stats, pd)
        rows = stats.row_count * sel
        pinned = {str(p.column) for p in unit.filters if isinstance(p, ColEqLiteral)}
        distinct = {}
        for c, s in stats.columns.items():
            q = f"{scan.alias}.{c}"
            distinct[q] = min(1.0 if q in pinned else float(s.distinct_count), rows)
        return UnitEstimate(rows, distinct, STATS)

    def _materialized_unit(self, unit: Unit) -> UnitEstimate:
        inter = self.catalog.intermediate(unit.leaf.id)
        fb = inter.feedback
        if fb is not None:
            rows, distinct, source = float(fb.exact_row_count), {c: float(d) for c, d in fb.distinct.items()}, FEEDBACK
        elif inter.prior_rows is not None:
            rows, distinct, source = inter.prior_rows, dict(inter.prior_distinct or {}), STATS
        else:
            rows = float(inter.exact_row_count)
            distinct = {c: rows for c in inter.columns}
            source = FALLBACK
        if unit.filters:
            stats = inter.stats if fb is not None else None
            sel = estimate_selectivity(list(unit.filters), stats)
            rows *= sel
            distinct = {c: min(d, rows) for c, d in distinct.items()}
            if stats is None:
                source = FALLBACK
        return UnitEstimate(rows, distinct, source)

    # -- joins ------------------------------------------------------------
    def join_rows(self, units: Sequence[UnitEstimate], preds: Sequence[tuple[int, str, int, str]]) -> float:
        """Cardinality of joining ``units`` under ``preds``.

        Each predicate is ``(unit_i, column_i, unit_j, column_j)``; applying
        :func:`estimate_join` predicate by predicate with unit-level distinct
        counts makes the result independent of join order.
        """
        rows = 1.0
        for u in units:
            rows *= u.rows
        for i, ci, j, cj in preds:
            rows = estimate_join(rows, 1.0, units[i].key_distinct(ci), units[j].key_distinct(cj))
        return rows

    def estimate_node(self, node: Node) -> Estimate:
        """Planner estimate for a logical node.

        Nodes without a direct formula take the largest child estimate.
        """
        if isinstance(node, (Scan, MaterializedScan)):
            u = self.unit(Unit(node))
            return Estimate(u.rows, u.source)
        if isinstance(node, Filter) and isinstance(node.child, (Scan, MaterializedScan)):
            u = self.unit(Unit(node.child, tuple(node.predicates)))
            return Estimate(u.rows, u.source)
        if isinstance(node, (Join, CrossProduct, Filter)):
            q = decompose(node)
            ests = [self.unit(u) for u in q.units]
            preds = []
            for p in q.predicates:
                i, j = q.unit_of(p.left.alias), q.unit_of(p.right.alias)
                preds.append((i, str(p.left), j, str(p.right)))
            return Estimate(self.join_rows(ests, preds), _merge_source(e.source for e in ests))
        if isinstance(node, (Project, Aggregate)):
            child = self.estimate_node(node.child)
            return Estimate(child.rows, FALLBACK)
        raise TypeError(f"cannot estimate {type(node).__name__}")

