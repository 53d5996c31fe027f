"""Slow, obviously-correct reference implementations used by the tests."""

from __future__ import annotations

import itertools
from collections import Counter
from functools import lru_cache

from aqplab.catalog import Catalog
from aqplab.plan import (
    Aggregate,
    ColCmpLiteral,
    ColEqCol,
    ColEqLiteral,
    ColPrefix,
    CrossProduct,
    Filter,
    Join,
    LogicalPlan,
    Project,
    Scan,
)

_CMP = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "!=": lambda a, b: a != b,
}


def holds(pred, row: dict) -> bool:
    if isinstance(pred, ColEqCol):
        return row[str(pred.left)] == row[str(pred.right)]
    v = row[str(pred.column)]
    if isinstance(pred, ColEqLiteral):
        return v == pred.value
    if isinstance(pred, ColCmpLiteral):
        return _CMP[pred.op](v, pred.value)
    if isinstance(pred, ColPrefix):
        return str(v).startswith(pred.prefix)
    raise TypeError(pred)


class _Pair:
    """Read-only view over two rows without building the merged dict."""

    def __init__(self, a: dict, b: dict):
        self.a, self.b = a, b

    def __getitem__(self, k):
        return self.a[k] if k in self.a else self.b[k]


def _collect(node, scans, preds, tail):
    if isinstance(node, (Project, Aggregate)):
        tail.append(node)
        _collect(node.child, scans, preds, tail)
    elif isinstance(node, Scan):
        scans.append(node)
    elif isinstance(node, Filter):
        preds.extend(node.predicates)
        _collect(node.child, scans, preds, tail)
    elif isinstance(node, Join):
        preds.extend(node.predicates)
        _collect(node.left, scans, preds, tail)
        _collect(node.right, scans, preds, tail)
    elif isinstance(node, CrossProduct):
        _collect(node.left, scans, preds, tail)
        _collect(node.right, scans, preds, tail)
    else:
        raise TypeError(node)


def table_rows(catalog: Catalog, table: str, alias: str) -> list[dict]:
    t = catalog.table(table)
    cols = t.defn.column_names
    lists = [t.data[c].tolist() for c in cols]
    return [{f"{alias}.{c}": v for c, v in zip(cols, vals)} for vals in zip(*lists)]


def nested_loop(plan: LogicalPlan, catalog: Catalog) -> Counter:
    """Result multiset by tuple-at-a-time nested loops over Python dicts."""
    scans, preds, tail = [], list(plan.join_predicates), []
    _collect(plan.root, scans, preds, tail)
    partial = [{}]
    covered: set[str] = set()
    pending = list(preds)
    for s in scans:
        rows = table_rows(catalog, s.table, s.alias)
        covered.add(s.alias)
        ready = [p for p in pending if p.aliases <= covered]
        pending = [p for p in pending if p not in ready]
        local = [p for p in ready if p.aliases == {s.alias}]
        rows = [b for b in rows if all(holds(p, b) for p in local)]
        cross = [p for p in ready if p not in local]
        partial = [{**a, **b} for a in partial for b in rows if all(holds(p, _Pair(a, b)) for p in cross)]
    if not tail:
        names = sorted(partial[0]) if partial else []
        return Counter(tuple(r[c] for c in names) for r in partial)
    top = tail[0]
    if isinstance(top, Project):
        return Counter(tuple(r[str(c)] for c in top.columns) for r in partial)
    groups: dict[tuple, list[dict]] = {}
    for r in partial:
        groups.setdefault(tuple(r[str(c)] for c in top.group_by), []).append(r)
    if not top.group_by and not groups:
        groups[()] = []
    out = Counter()
    for key, members in groups.items():
        vals = []
        for a in top.aggregates:
            if a.func == "COUNT":
                vals.append(len(members))
                continue
            xs = [m[str(a.column)] for m in members]
            if not xs:
                vals.append(None)
            elif a.func == "SUM":
                vals.append(sum(xs))
            elif a.func == "MIN":
                vals.append(min(xs))
            else:
                vals.append(max(xs))
        out[key + tuple(vals)] += 1
    return out


def sorted_distinct(values) -> int:
    """Distinct count by sorting and counting boundaries."""
    xs = sorted(values)
    return sum(1 for i, x in enumerate(xs) if i == 0 or x != xs[i - 1])


def all_join_trees(items: frozenset, connected) -> list:
    """Every ordered binary tree over ``items`` whose joins are connected."""

    @lru_cache(maxsize=None)
    def trees(s: frozenset) -> tuple:
        if len(s) == 1:
            return tuple(s)
        out = []
        elems = sorted(s)
        for r in range(1, len(elems)):
            for left in itertools.combinations(elems, r):
                left = frozenset(left)
                right = s - left
                if not connected(left, right):
                    continue
                for lt in trees(left):
                    for rt in trees(right):
                        out.append((lt, rt))
        return tuple(out)

    return list(trees(frozenset(items)))


def exhaustive_min_cout(ctx) -> float:
    """Least Cout over all connected bushy trees, by listing every tree."""

    def leaves(t) -> frozenset:
        return frozenset([t]) if isinstance(t, int) else leaves(t[0]) | leaves(t[1])

    def mask(s) -> int:
        return sum(1 << i for i in s)

    def linked(a, b) -> bool:
        return any((i in a and j in b) or (i in b and j in a) for i, _, j, _, _ in ctx.preds)

    def cost(t) -> float:
        if isinstance(t, int):
            return 0.0
        return cost(t[0]) + cost(t[1]) + ctx.card(mask(leaves(t)))

    return min(cost(t) for t in all_join_trees(frozenset(range(ctx.n)), linked))
