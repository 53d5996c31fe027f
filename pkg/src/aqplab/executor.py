"""Single-threaded batch executor for physical plans.

Operators are generators over columnar batches (qualified column name ->
numpy array) of at most ``BATCH_SIZE`` rows. Every operator's output is
counted, which is what the monitor reads back after a round.
"""

from __future__ import annotations

import hashlib
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

from .catalog import Catalog
from .optimizer import (
    AggregateExec,
    CrossProductExec,
    FilterExec,
    HashJoin,
    MaterializedScanExec,
    PhysicalPlan,
    PhysNode,
    ProjectExec,
    TableScan,
)
from .plan import ColCmpLiteral, ColEqCol, ColEqLiteral, ColPrefix, Predicate

BATCH_SIZE = 1024
INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1

Batch = dict[str, np.ndarray]


class QueryTimeout(Exception):
    pass


@dataclass
class ExecMetrics:
    operator_rows: list[tuple[str, str, int]] = field(default_factory=list)  # (path, kind, rows), pre-order
    total_intermediate_tuples: int = 0
    wall_ns: int = 0
    peak_rows_materialized: int = 0


@dataclass
class ResultSet:
    columns: tuple[str, ...]
    data: dict[str, np.ndarray]

    def __len__(self) -> int:
        for a in self.data.values():
            return len(a)
        return 0

    def rows(self) -> list[tuple]:
        cols = [self.data[c].tolist() if isinstance(self.data[c], np.ndarray) else list(self.data[c]) for c in self.columns]
        return list(zip(*cols)) if cols else []

    def multiset(self) -> Counter:
        return Counter(self.rows())

    def same_rows(self, other: "ResultSet") -> bool:
        return len(self) == len(other) and self.multiset() == other.multiset()

    def checksum(self) -> str:
        return result_checksum(self.rows())


def _encode(v) -> bytes:
    if v is None:
        return b"N"
    if isinstance(v, str):
        return b"S" + v.encode("utf-8")
    return b"I" + str(int(v)).encode()


def result_checksum(rows) -> str:
    """Order-insensitive 64-bit checksum: sum of per-row hashes mod 2**64."""
    total = 0
    for row in rows:
        h = hashlib.blake2b(b"\x1f".join(_encode(v) for v in row), digest_size=8)
        total = (total + int.from_bytes(h.digest(), "little")) & 0xFFFFFFFFFFFFFFFF
    return f"{total:016x}"


# -- helpers -----------------------------------------------------------------


def _rows(batch: Mapping[str, np.ndarray]) -> int:
    for a in batch.values():
        return len(a)
    return 0


def _take(batch: Batch, idx) -> Batch:
    return {c: a[idx] for c, a in batch.items()}


def _concat(batches: list[Batch], columns: tuple[str, ...], empty: Mapping[str, np.ndarray]) -> Batch:
    if not batches:
        return {c: empty[c] for c in columns}
    if len(batches) == 1:
        return batches[0]
    return {c: np.concatenate([b[c] for b in batches]) for c in columns}


def _rechunk(batch: Batch) -> Iterator[Batch]:
    n = _rows(batch)
    if n <= BATCH_SIZE:
        if n:
            yield batch
        return
    for s in range(0, n, BATCH_SIZE):
        yield {c: a[s : s + BATCH_SIZE] for c, a in batch.items()}


def _coalesce(batches: Iterator[Batch]) -> Iterator[Batch]:
    """Merge runs of small batches so downstream probes see full chunks."""
    pending: list[Batch] = []
    size = 0
    for b in batches:
        pending.append(b)
        size += _rows(b)
        if size >= BATCH_SIZE:
            yield _concat(pending, tuple(b), b)
            pending, size = [], 0
    if pending:
        yield _concat(pending, tuple(pending[0]), pending[0])


def predicate_mask(pred: Predicate, batch: Batch) -> np.ndarray:
    if isinstance(pred, ColEqCol):
        return batch[str(pred.left)] == batch[str(pred.right)]
    arr = batch[str(pred.column)]
    if isinstance(pred, ColEqLiteral):
        return arr == pred.value
    if isinstance(pred, ColPrefix):
        if arr.size == 0:
            return np.zeros(0, dtype=bool)
        return np.char.startswith(arr, pred.prefix)
    assert isinstance(pred, ColCmpLiteral)
    op, v = pred.op, pred.value
    if op == "<":
        return arr < v
    if op == "<=":
        return arr <= v
    if op == ">":
        return arr > v
    if op == ">=":
        return arr >= v
    return arr != v


def _group_codes(keys: list[np.ndarray]) -> tuple[np.ndarray, int]:
    """Dense group ids for the row tuples formed by ``keys``."""
    n = len(keys[0])
    codes = np.zeros(n, dtype=np.int64)
    ngroups = 1
    for k in keys:
        uniq, inv = np.unique(k, return_inverse=True)
        combined = codes * len(uniq) + inv.reshape(-1)
        _, codes = np.unique(combined, return_inverse=True)
        codes = codes.reshape(-1)
        ngroups = int(codes.max()) + 1 if n else 0
    return codes, ngroups


def exact_group_sums(values: np.ndarray, codes: np.ndarray, ngroups: int) -> list[int]:
    """Per-group int64 sums computed exactly; raises on int64 overflow."""
    v = values.astype(np.int64)
    hi = v >> 32
    lo = v & 0xFFFFFFFF
    hi_s = np.zeros(ngroups, dtype=np.int64)
    lo_s = np.zeros(ngroups, dtype=np.int64)
    np.add.at(hi_s, codes, hi)
    np.add.at(lo_s, codes, lo)
    out = []
    for h, l in zip(hi_s.tolist(), lo_s.tolist()):
        s = (h << 32) + l
        if s < INT64_MIN or s > INT64_MAX:
            raise OverflowError("SUM overflows int64")
        out.append(s)
    return out


class HashIndex:
    """Equi-join index over a fully materialized build side.

    Keys are sorted once; probing uses binary search, which handles int and
    text keys alike. Extra key pairs are checked on the candidate matches.
    """

    def __init__(self, build: Batch, keys: list[tuple[str, str]]):
        self.build = build
        self.rows = _rows(build)
        (self.bkey, self.pkey), *self.residual = keys
        self.order = np.argsort(build[self.bkey], kind="stable")
        self.sorted_keys = build[self.bkey][self.order]

    def probe(self, batch: Batch) -> Batch:
        if self.rows == 0:
            return {}
        pkey = batch[self.pkey]
        lo = np.searchsorted(self.sorted_keys, pkey, side="left")
        hi = np.searchsorted(self.sorted_keys, pkey, side="right")
        counts = hi - lo
        total = int(counts.sum())
        if total == 0:
            return {}
        probe_idx = np.repeat(np.arange(len(pkey)), counts)
        offsets = np.repeat(lo - np.cumsum(counts) + counts, counts)
        build_idx = self.order[offsets + np.arange(total)]
        if self.residual:
            keep = np.ones(total, dtype=bool)
            for b, p in self.residual:
                keep &= self.build[b][build_idx] == batch[p][probe_idx]
            probe_idx, build_idx = probe_idx[keep], build_idx[keep]
        out = _take(batch, probe_idx)
        out.update(_take(self.build, build_idx))
        return out


# -- execution -----------------------------------------------------------------


class _Run:
    def __init__(self, catalog: Catalog, deadline_ns: int | None):
        self.catalog = catalog
        self.deadline_ns = deadline_ns
        self.counts: dict[int, int] = {}
        self.live = 0
        self.peak = 0

    def check_time(self) -> None:
        if self.deadline_ns is not None and time.perf_counter_ns() > self.deadline_ns:
            raise QueryTimeout("query exceeded its time limit")

    def hold(self, n: int) -> None:
        self.live += n
        self.peak = max(self.peak, self.live)

    def columns(self, node: PhysNode) -> tuple[str, ...]:
        if isinstance(node, TableScan):
            return tuple(f"{node.alias}.{c}" for c in node.columns)
        if isinstance(node, MaterializedScanExec):
            return tuple(node.columns)
        if isinstance(node, FilterExec):
            return self.columns(node.child)
        if isinstance(node, HashJoin):
            return self.columns(node.probe) + self.columns(node.build)
        if isinstance(node, CrossProductExec):
            return self.columns(node.left) + self.columns(node.right)
        if isinstance(node, ProjectExec):
            return tuple(str(c) for c in node.columns)
        if isinstance(node, AggregateExec):
            return tuple(str(c) for c in node.group_by) + tuple(str(a) for a in node.aggregates)
        raise TypeError(f"unknown physical node {type(node).__name__}")

    def empty(self, node: PhysNode) -> dict[str, np.ndarray]:
        """Zero-row columns with the right dtypes."""
        if isinstance(node, TableScan):
            data = self.catalog.table(node.table).data
            return {f"{node.alias}.{c}": data[c][:0] for c in node.columns}
        if isinstance(node, MaterializedScanExec):
            data = self.catalog.intermediate(node.id).data
            return {c: data[c][:0] for c in node.columns}
        if isinstance(node, (HashJoin, CrossProductExec)):
            out = {}
            for c in node.children:
                out.update(self.empty(c))
            return out
        if isinstance(node, FilterExec):
            return self.empty(node.child)
        if isinstance(node, ProjectExec):
            e = self.empty(node.child)
            return {str(c): e[str(c)] for c in node.columns}
        e = self.empty(node.child)
        out = {str(c): e[str(c)] for c in node.group_by}
        for a in node.aggregates:
            if a.func == "COUNT" or a.func == "SUM":
                out[str(a)] = np.zeros(0, dtype=np.int64)
            else:
                out[str(a)] = e[str(a.column)]
        return out

    def run(self, node: PhysNode) -> Iterator[Batch]:
        key = id(node)
        self.counts[key] = 0
        for batch in self._dispatch(node):
            n = _rows(batch)
            if n == 0:
                continue
            self.check_time()
            self.counts[key] += n
            yield batch
        node.actual = self.counts[key]

    def _dispatch(self, node: PhysNode) -> Iterator[Batch]:
        if isinstance(node, TableScan):
            data = self.catalog.table(node.table).data
            yield from _rechunk({f"{node.alias}.{c}": data[c] for c in node.columns})
        elif isinstance(node, MaterializedScanExec):
            inter = self.catalog.intermediate(node.id)
            yield from _rechunk({c: inter.data[c] for c in node.columns})
        elif isinstance(node, FilterExec):
            for batch in self.run(node.child):
                mask = np.ones(_rows(batch), dtype=bool)
                for p in node.predicates:
                    mask &= predicate_mask(p, batch)
                yield _take(batch, mask)
        elif isinstance(node, HashJoin):
            yield from self._hash_join(node)
        elif isinstance(node, CrossProductExec):
            yield from self._cross(node)
        elif isinstance(node, ProjectExec):
            cols = [str(c) for c in node.columns]
            for batch in self.run(node.child):
                yield {c: batch[c] for c in cols}
        elif isinstance(node, AggregateExec):
            yield from _rechunk(self._aggregate(node))
        else:
            raise TypeError(f"unknown physical node {type(node).__name__}")

    def _drain(self, node: PhysNode) -> Batch:
        return _concat(list(self.run(node)), self.columns(node), self.empty(node))

    def _hash_join(self, node: HashJoin) -> Iterator[Batch]:
        build = self._drain(node.build)
        index = HashIndex(build, [(str(b), str(p)) for b, p in node.keys])
        self.hold(index.rows)
        try:
            for batch in _coalesce(self.run(node.probe)):
                yield from _rechunk(index.probe(batch))
        finally:
            self.live -= index.rows

    def _cross(self, node: CrossProductExec) -> Iterator[Batch]:
        right = self._drain(node.right)
        nr = _rows(right)
        self.hold(nr)
        try:
            for batch in self.run(node.left):
                if nr == 0:
                    continue
                nl = _rows(batch)
                # emit in slices of left rows so batches stay bounded
                step = max(1, BATCH_SIZE // nr)
                for s in range(0, nl, step):
                    part = {c: a[s : s + step] for c, a in batch.items()}
                    k = _rows(part)
                    out = {c: np.repeat(a, nr) for c, a in part.items()}
                    out.update({c: np.tile(a, k) for c, a in right.items()})
                    yield from _rechunk(out)
        finally:
            self.live -= nr

    def _aggregate(self, node: AggregateExec) -> Batch:
        child = self._drain(node.child)
        n = _rows(child)
        self.hold(n)
        try:
            if node.group_by:
                if n == 0:
                    return self.empty(node)
                keys = [child[str(c)] for c in node.group_by]
                codes, ng = _group_codes(keys)
                _, first = np.unique(codes, return_index=True)
                out = {str(c): child[str(c)][first] for c in node.group_by}
            else:
                codes, ng = np.zeros(n, dtype=np.int64), 1
                out = {}
            for a in node.aggregates:
                name = str(a)
                if a.func == "COUNT":
                    out[name] = np.bincount(codes, minlength=ng).astype(np.int64)
                    continue
                vals = child[str(a.column)]
                if n == 0:
                    out[name] = np.array([None], dtype=object)
                elif a.func == "SUM":
                    out[name] = np.array(exact_group_sums(vals, codes, ng), dtype=np.int64)
                else:
                    order = np.lexsort((vals, codes))
                    sc = codes[order]
                    bounds = np.flatnonzero(np.diff(sc)) + 1
                    starts = np.concatenate(([0], bounds))
                    ends = np.concatenate((bounds, [n])) - 1
                    pick = starts if a.func == "MIN" else ends
                    out[name] = vals[order][pick]
            return out
        finally:
            self.live -= n


def execute(
    plan: PhysicalPlan | PhysNode,
    catalog: Catalog,
    timeout_s: float | None = None,
    deadline_ns: int | None = None,
) -> tuple[ResultSet, ExecMetrics]:
    """Run ``plan`` to completion and return its rows plus per-operator counts."""
    root = plan.root if isinstance(plan, PhysicalPlan) else plan
    t0 = time.perf_counter_ns()
    if timeout_s is not None:
        limit = t0 + int(timeout_s * 1e9)
        deadline_ns = limit if deadline_ns is None else min(deadline_ns, limit)
    r = _Run(catalog, deadline_ns)
    cols = r.columns(root)
    data = _concat(list(r.run(root)), cols, r.empty(root))
    wall = time.perf_counter_ns() - t0
    metrics = ExecMetrics(wall_ns=wall, peak_rows_materialized=r.peak)

    def visit(n: PhysNode, path: str) -> None:
        rows = r.counts.get(id(n), 0)
        if n.actual is None or id(n) not in r.counts:
            n.actual = rows
        metrics.operator_rows.append((path, n.kind, rows))
        kids = (n.probe, n.build) if isinstance(n, HashJoin) else n.children
        for i, c in enumerate(kids):
            visit(c, f"{path}.{i}")

    visit(root, "0")
    # a projection forwards tuples rather than producing new ones
    metrics.total_intermediate_tuples = sum(rows for _, k, rows in metrics.operator_rows[1:] if k != "ProjectExec")
    return ResultSet(cols, {c: data[c] for c in cols}), metrics
