"""In-memory catalog: base tables, materialized intermediates and statistics."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

INT64 = "int64"
TEXT = "text"
COLUMN_TYPES = (INT64, TEXT)


class CatalogError(Exception):
    """Raised for schema violations, load failures and unknown ids."""


class TypeParseError(CatalogError):
    def __init__(self, row: int, column: str, value: str):
        super().__init__(f"row {row}, column {column!r}: cannot parse {value!r} as int64")
        self.row = row
        self.column = column
        self.value = value


@dataclass(frozen=True)
class TableDef:
    name: str
    columns: tuple[tuple[str, str], ...]
    primary_key: str | None = None
    foreign_keys: tuple[tuple[str, str, str], ...] = ()

    def __post_init__(self):
        names = [c for c, _ in self.columns]
        if len(set(names)) != len(names):
            raise CatalogError(f"table {self.name}: duplicate column names")
        for col, typ in self.columns:
            if typ not in COLUMN_TYPES:
                raise CatalogError(f"table {self.name}: column {col} has unknown type {typ!r}")
        if self.primary_key is not None and self.primary_key not in names:
            raise CatalogError(f"table {self.name}: primary key {self.primary_key} is not a column")
        for local, _, _ in self.foreign_keys:
            if local not in names:
                raise CatalogError(f"table {self.name}: foreign key column {local} is not a column")

    @property
    def column_names(self) -> list[str]:
        return [c for c, _ in self.columns]

    def column_type(self, column: str) -> str:
        for c, t in self.columns:
            if c == column:
                return t
        raise CatalogError(f"table {self.name} has no column {column!r}")

    def has_column(self, column: str) -> bool:
        return any(c == column for c, _ in self.columns)

    def to_json(self) -> dict:
        doc: dict = {"name": self.name, "columns": [list(c) for c in self.columns]}
        if self.primary_key is not None:
            doc["primary_key"] = self.primary_key
        doc["foreign_keys"] = [list(fk) for fk in self.foreign_keys]
        return doc

    @classmethod
    def from_json(cls, doc: Mapping) -> "TableDef":
        return cls(
            name=doc["name"],
            columns=tuple((c, t.lower()) for c, t in doc["columns"]),
            primary_key=doc.get("primary_key"),
            foreign_keys=tuple(tuple(fk) for fk in doc.get("foreign_keys", [])),
        )


@dataclass(frozen=True)
class ColumnStat:
    distinct_count: int
    min: int | None = None
    max: int | None = None


@dataclass(frozen=True)
class ColumnStats:
    """Exact per-table statistics from a full scan."""

    row_count: int
    columns: dict[str, ColumnStat]

    def distinct(self, column: str) -> int:
        return self.columns[column].distinct_count


@dataclass
class Table:
    id: int
    defn: TableDef
    data: dict[str, np.ndarray]
    stats: ColumnStats | None = None
    _prefix_cache: dict = field(default_factory=dict, repr=False)

    @property
    def name(self) -> str:
        return self.defn.name

    @property
    def row_count(self) -> int:
        return _row_count(self.data)


@dataclass
class IntermediateResult:
    """A materialized sub-plan output.

    Column names are qualified (``alias.column``) so residual plans can keep
    referring to the relation instances the intermediate was built from.
    """

    id: int
    columns: tuple[str, ...]
    provenance: tuple[tuple[str, str], ...]
    data: dict[str, np.ndarray]
    exact_row_count: int
    stats: ColumnStats | None = None
    prior_rows: float | None = None
    prior_distinct: dict[str, float] | None = None
    feedback: object | None = None

    @property
    def covers(self) -> frozenset[str]:
        return frozenset(c.split(".", 1)[0] for c in self.columns)


def _row_count(data: Mapping[str, np.ndarray]) -> int:
    for arr in data.values():
        return len(arr)
    return 0


def _as_column(values, typ: str) -> np.ndarray:
    if typ == INT64:
        return np.asarray(values, dtype=np.int64)
    arr = np.asarray(values, dtype=str)
    if arr.size == 0:
        return np.zeros(0, dtype="<U1")
    return arr


def compute_stats(data: Mapping[str, np.ndarray]) -> ColumnStats:
    n = _row_count(data)
    cols = {}
    for name, arr in data.items():
        if n == 0:
            cols[name] = ColumnStat(0)
            continue
        uniq = np.unique(arr)
        if arr.dtype.kind in "iu":
            cols[name] = ColumnStat(len(uniq), int(uniq[0]), int(uniq[-1]))
        else:
            cols[name] = ColumnStat(len(uniq))
    return ColumnStats(n, cols)


class Catalog:
    """Registry of base tables and per-query intermediates.

    Ids are drawn from a single counter, so an intermediate id never collides
    with a base table or an earlier intermediate, even after it is dropped.
    """

    def __init__(self):
        self._next_id = 0
        self.tables: dict[int, Table] = {}
        self._by_name: dict[str, int] = {}
        self.intermediates: dict[int, IntermediateResult] = {}

    def _fresh_id(self) -> int:
        self._next_id += 1
        return self._next_id - 1

    # -- schema -----------------------------------------------------------
    def table_def(self, name: str) -> TableDef:
        return self.table(name).defn

    def has_table(self, name: str) -> bool:
        return name in self._by_name

    def table(self, ref: int | str) -> Table:
        try:
            if isinstance(ref, str):
                return self.tables[self._by_name[ref]]
            return self.tables[ref]
        except KeyError:
            raise CatalogError(f"unknown table {ref!r}") from None

    def table_names(self) -> list[str]:
        return list(self._by_name)

    def foreign_key(self, table: str, column: str) -> tuple[str, str] | None:
        for local, ref_table, ref_col in self.table_def(table).foreign_keys:
            if local == column:
                return ref_table, ref_col
        return None

    # -- ingestion --------------------------------------------------------
    def add_table(self, defn: TableDef, data: Mapping[str, Sequence]) -> int:
        if defn.name in self._by_name:
            raise CatalogError(f"duplicate table name {defn.name!r}")
        for _, ref_table, ref_col in defn.foreign_keys:
            if ref_table == defn.name:
                target = defn
            elif ref_table in self._by_name:
                target = self.table_def(ref_table)
            else:
                raise CatalogError(f"table {defn.name}: foreign key references undeclared table {ref_table}")
            if not target.has_column(ref_col):
                raise CatalogError(f"table {defn.name}: foreign key references unknown column {ref_table}.{ref_col}")
        if set(data) != set(defn.column_names):
            raise CatalogError(f"table {defn.name}: data columns do not match definition")
        columns = {c: _as_column(data[c], t) for c, t in defn.columns}
        lengths = {len(a) for a in columns.values()}
        if len(lengths) > 1:
            raise CatalogError(f"table {defn.name}: ragged columns")
        if defn.primary_key is not None:
            pk = columns[defn.primary_key]
            if len(np.unique(pk)) != len(pk):
                raise CatalogError(f"table {defn.name}: duplicate values in primary key {defn.primary_key}")
        tid = self._fresh_id()
        self.tables[tid] = Table(tid, defn, columns)
        self._by_name[defn.name] = tid
        return tid

    def load_csv(self, path: str | Path, defn: TableDef) -> int:
        path = Path(path)
        if not path.exists():
            raise CatalogError(f"no such file: {path}")
        names = defn.column_names
        types = [t for _, t in defn.columns]
        values: list[list] = [[] for _ in names]
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or header != names:
                raise CatalogError(f"{path}: header {header} does not match columns {names}")
            for lineno, row in enumerate(reader, start=1):
                if len(row) != len(names):
                    raise CatalogError(f"{path}: row {lineno} has {len(row)} fields, expected {len(names)}")
                for i, cell in enumerate(row):
                    if types[i] == INT64:
                        try:
                            values[i].append(int(cell))
                        except ValueError:
                            raise TypeParseError(lineno, names[i], cell) from None
                    else:
                        values[i].append(cell)
        return self.add_table(defn, dict(zip(names, values)))

    def load_schema(self, path: str | Path) -> list[TableDef]:
        doc = json.loads(Path(path).read_text())
        return [TableDef.from_json(t) for t in doc["tables"]]

    def load_directory(self, data_dir: str | Path, analyze: bool = True) -> None:
        """Load ``schema.json`` plus one ``<table>.csv`` per table."""
        data_dir = Path(data_dir)
        for defn in _fk_order(self.load_schema(data_dir / "schema.json")):
            tid = self.load_csv(data_dir / f"{defn.name}.csv", defn)
            if analyze:
                self.analyze(tid)

    # -- statistics -------------------------------------------------------
    def analyze(self, ref: int | str) -> ColumnStats:
        table = self.table(ref)
        table.stats = compute_stats(table.data)
        table._prefix_cache.clear()
        return table.stats

    def prefix_distinct(self, ref: int | str, column: str, length: int) -> int:
        """Distinct values of ``column`` truncated to ``length`` characters."""
        table = self.table(ref)
        key = (column, length)
        if key not in table._prefix_cache:
            arr = table.data[column]
            trunc = arr.astype(f"<U{max(length, 1)}") if arr.size else arr
            table._prefix_cache[key] = len(np.unique(trunc))
        return table._prefix_cache[key]

    # -- intermediates ----------------------------------------------------
    def materialize(
        self,
        data: Mapping[str, np.ndarray] | Sequence[tuple],
        schema: Sequence[str],
        provenance: Sequence[tuple[str, str]] | None = None,
        analyze: bool = True,
    ) -> IntermediateResult:
        """Register a result batch as a fresh intermediate.

        ``data`` is either columnar (name -> array) or a sequence of row tuples.
        Row count is always exact; per-column distinct counts are computed
        only when ``analyze`` is set.
        """
        schema = tuple(schema)
        if isinstance(data, Mapping):
            if len(data) != len(schema) or set(data) != set(schema):
                raise CatalogError(f"arity mismatch: {len(data)} columns for schema of {len(schema)}")
            # the catalog owns its intermediates, so callers may reuse their buffers
            columns = {c: np.array(data[c], copy=True) for c in schema}
        else:
            rows = list(data)
            for r in rows:
                if len(r) != len(schema):
                    raise CatalogError(f"arity mismatch: row of {len(r)} values for schema of {len(schema)}")
            columns = {c: np.asarray([r[i] for r in rows]) for i, c in enumerate(schema)}
        if provenance is None:
            provenance = tuple(self._provenance_of(c) for c in schema)
        iid = self._fresh_id()
        inter = IntermediateResult(
            id=iid,
            columns=schema,
            provenance=tuple(provenance),
            data=columns,
            exact_row_count=_row_count(columns),
            stats=compute_stats(columns) if analyze else None,
        )
        self.intermediates[iid] = inter
        return inter

    def _provenance_of(self, qualified: str) -> tuple[str, str]:
        alias, _, col = qualified.partition(".")
        return alias, col

    def intermediate(self, iid: int) -> IntermediateResult:
        try:
            return self.intermediates[iid]
        except KeyError:
            raise CatalogError(f"unknown intermediate id {iid}") from None

    def analyze_intermediate(self, iid: int) -> ColumnStats:
        inter = self.intermediate(iid)
        inter.stats = compute_stats(inter.data)
        return inter.stats

    def release(self, iid: int) -> None:
        """Free the rows of an intermediate; metadata stays for estimates."""
        inter = self.intermediates.get(iid)
        if inter is not None:
            inter.data = {c: a[:0] for c, a in inter.data.items()}

    def drop_intermediates(self) -> None:
        self.intermediates.clear()


def _fk_order(defs: Iterable[TableDef]) -> list[TableDef]:
    """Order definitions so referenced tables are registered first."""
    pending = {d.name: d for d in defs}
    ordered: list[TableDef] = []
    done: set[str] = set()
    while pending:
        progressed = False
        for name in list(pending):
            d = pending[name]
            deps = {r for _, r, _ in d.foreign_keys if r != name}
            if deps <= done or not (deps & set(pending)):
                ordered.append(d)
                done.add(name)
                del pending[name]
                progressed = True
        if not progressed:
            # cyclic references: register in declaration order, the FK check
            # will report anything truly undeclared
            ordered.extend(pending.values())
            break
    return ordered


def write_schema(defs: Iterable[TableDef], path: str | Path) -> None:
    doc = {"tables": [d.to_json() for d in defs]}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
