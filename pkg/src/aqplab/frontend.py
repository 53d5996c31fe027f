"""Parser for the conjunctive SPJ + aggregation SQL subset, and plan JSON codec.

Supported shape::

    SELECT <* | col, ... | AGG(col|*), ...> FROM table [AS] alias, ...
    [WHERE conjunct AND ...] [GROUP BY col, ...] [;]

Aggregate results list the grouping columns first, then the aggregates in
select-list order.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Protocol

from .catalog import INT64, TEXT, TableDef
from .plan import (
    AGG_FUNCS,
    Aggregate,
    AggregateCall,
    ColCmpLiteral,
    ColEqCol,
    ColEqLiteral,
    ColPrefix,
    ColumnRef,
    CrossProduct,
    Filter,
    Join,
    LogicalPlan,
    MaterializedScan,
    Node,
    PlanError,
    Predicate,
    Project,
    Scan,
)


class Schema(Protocol):
    def table_def(self, name: str) -> TableDef: ...
    def has_table(self, name: str) -> bool: ...


class ParseError(Exception):
    def __init__(self, message: str, position: int | None = None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>-?\d+)
  | (?P<str>'(?:[^']|'')*')
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|!=|<>|=|<|>)
  | (?P<punct>[(),.*;])
    """,
    re.VERBOSE,
)

_KEYWORDS = {"SELECT", "FROM", "WHERE", "AND", "OR", "NOT", "GROUP", "BY", "AS", "LIKE", *AGG_FUNCS}


@dataclass
class _Tok:
    kind: str
    value: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        val = m.group()
        if kind == "ident" and val.upper() in _KEYWORDS:
            toks.append(_Tok("kw", val.upper(), pos))
        elif kind == "str":
            toks.append(_Tok("str", val[1:-1].replace("''", "'"), pos))
        elif kind != "ws":
            toks.append(_Tok(kind, "!=" if val == "<>" else val, pos))
        pos = m.end()
    toks.append(_Tok("eof", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str, schema: Schema):
        self.toks = _tokenize(text)
        self.i = 0
        self.schema = schema
        self.relations: list[tuple[str, str]] = []  # (table, alias)

    # token helpers
    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def advance(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def accept(self, kind: str, value: str | None = None) -> _Tok | None:
        t = self.tok
        if t.kind == kind and (value is None or t.value == value):
            self.i += 1
            return t
        return None

    def expect(self, kind: str, value: str | None = None) -> _Tok:
        t = self.accept(kind, value)
        if t is None:
            want = value or kind
            got = self.tok.value or self.tok.kind
            raise ParseError(f"expected {want}, found {got!r}", self.tok.pos)
        return t

    # grammar
    def parse(self) -> LogicalPlan:
        self.expect("kw", "SELECT")
        items_start = self.i
        self._skip_select_list()
        self.expect("kw", "FROM")
        self._from_list()
        after_from = self.i
        self.i = items_start
        star, items = self._select_list()
        self.i = after_from

        conjuncts: list[tuple[Predicate, int]] = []
        if self.accept("kw", "WHERE"):
            conjuncts.append(self._conjunct())
            while self.accept("kw", "AND"):
                conjuncts.append(self._conjunct())
            if self.tok.kind == "kw" and self.tok.value == "OR":
                raise ParseError("disjunctions (OR) are not supported", self.tok.pos)
        group_by: list[ColumnRef] = []
        if self.accept("kw", "GROUP"):
            self.expect("kw", "BY")
            group_by.append(self._column())
            while self.accept("punct", ","):
                group_by.append(self._column())
        self.accept("punct", ";")
        if self.tok.kind != "eof":
            raise ParseError(f"unexpected {self.tok.value!r}", self.tok.pos)
        return self._build(star, items, conjuncts, group_by)

    def _skip_select_list(self) -> None:
        depth = 0
        while not (depth == 0 and self.tok.kind == "kw" and self.tok.value == "FROM"):
            if self.tok.kind == "eof":
                raise ParseError("expected FROM", self.tok.pos)
            if self.tok.value == "(":
                depth += 1
            elif self.tok.value == ")":
                depth -= 1
            self.advance()

    def _from_list(self) -> None:
        self._from_item()
        while self.accept("punct", ","):
            self._from_item()

    def _from_item(self) -> None:
        t = self.expect("ident")
        if not self.schema.has_table(t.value):
            raise ParseError(f"unknown table {t.value!r}", t.pos)
        alias = t.value
        if self.accept("kw", "AS"):
            alias = self.expect("ident").value
        elif self.tok.kind == "ident":
            alias = self.advance().value
        if any(a == alias for _, a in self.relations):
            raise ParseError(f"duplicate alias {alias!r}", t.pos)
        self.relations.append((t.value, alias))

    def _select_list(self):
        if self.accept("punct", "*"):
            return True, []
        items = [self._select_item()]
        while self.accept("punct", ","):
            items.append(self._select_item())
        return False, items

    def _select_item(self):
        if self.tok.kind == "kw" and self.tok.value in AGG_FUNCS:
            func = self.advance().value
            self.expect("punct", "(")
            if func == "COUNT" and self.accept("punct", "*"):
                col = None
            else:
                pos = self.tok.pos
                col = self._column()
                if func == "SUM" and self._type(col) != INT64:
                    raise ParseError(f"SUM needs an int64 column, {col} is text", pos)
            self.expect("punct", ")")
            self._alias_suffix()
            return AggregateCall(func, col)
        col = self._column()
        self._alias_suffix()
        return col

    def _alias_suffix(self) -> None:
        if self.accept("kw", "AS"):
            self.expect("ident")

    def _column(self) -> ColumnRef:
        t = self.expect("ident")
        if self.accept("punct", "."):
            c = self.expect("ident")
            for table, alias in self.relations:
                if alias == t.value:
                    if not self.schema.table_def(table).has_column(c.value):
                        raise ParseError(f"unknown column {t.value}.{c.value}", c.pos)
                    return ColumnRef(alias, c.value)
            raise ParseError(f"unknown relation {t.value!r}", t.pos)
        owners = [a for table, a in self.relations if self.schema.table_def(table).has_column(t.value)]
        if not owners:
            raise ParseError(f"unknown column {t.value!r}", t.pos)
        if len(owners) > 1:
            raise ParseError(f"ambiguous column {t.value!r}", t.pos)
        return ColumnRef(owners[0], t.value)

    def _type(self, col: ColumnRef) -> str:
        table = next(t for t, a in self.relations if a == col.alias)
        return self.schema.table_def(table).column_type(col.column)

    def _literal(self):
        t = self.tok
        if self.accept("num"):
            return int(t.value), INT64
        if self.accept("str"):
            return t.value, TEXT
        raise ParseError(f"expected literal, found {t.value!r}", t.pos)

    def _operand(self):
        if self.tok.kind in ("num", "str"):
            return ("lit",) + self._literal()
        return ("col", self._column())

    def _conjunct(self) -> tuple[Predicate, int]:
        pos = self.tok.pos
        if self.tok.kind == "kw" and self.tok.value == "NOT":
            raise ParseError("NOT is not supported", pos)
        if self.accept("punct", "("):
            raise ParseError("parenthesized conditions are not supported", pos)
        lhs = self._operand()
        if self.accept("kw", "LIKE"):
            if lhs[0] != "col":
                raise ParseError("LIKE needs a column on the left", pos)
            pat_tok = self.expect("str")
            return self._like(lhs[1], pat_tok), pos
        op_tok = self.expect("op")
        rhs = self._operand()
        op = op_tok.value
        if lhs[0] == "lit" and rhs[0] == "lit":
            raise ParseError("comparison between two literals", pos)
        if lhs[0] == "lit":
            lhs, rhs = rhs, lhs
            op = {"<": ">", ">": "<", "<=": ">=", ">=": "<="}.get(op, op)
        col = lhs[1]
        if rhs[0] == "col":
            other = rhs[1]
            if op != "=":
                raise ParseError("only equality is supported between columns", op_tok.pos)
            if other.alias == col.alias:
                raise ParseError(f"column comparison {col} = {other} within one relation", pos)
            if self._type(col) != self._type(other):
                raise ParseError(f"type mismatch: {col} vs {other}", pos)
            return ColEqCol(col, other), pos
        value, vtype = rhs[1], rhs[2]
        ctype = self._type(col)
        if vtype != ctype:
            raise ParseError(f"type mismatch: {col} is {ctype}, literal is {vtype}", pos)
        if op == "=":
            return ColEqLiteral(col, value), pos
        if ctype == TEXT and op != "!=":
            raise ParseError(f"range comparison on text column {col}", op_tok.pos)
        return ColCmpLiteral(col, op, value), pos

    def _like(self, col: ColumnRef, pat: _Tok) -> ColPrefix:
        if self._type(col) != TEXT:
            raise ParseError(f"LIKE on non-text column {col}", pat.pos)
        p = pat.value
        if not p.endswith("%") or "%" in p[:-1] or "_" in p:
            raise ParseError(f"only prefix patterns 'abc%' are supported, got {p!r}", pat.pos)
        return ColPrefix(col, p[:-1])

    def _build(self, star, items, conjuncts, group_by) -> LogicalPlan:
        local: dict[str, list[Predicate]] = {a: [] for _, a in self.relations}
        joins: list[ColEqCol] = []
        for pred, _ in conjuncts:
            if isinstance(pred, ColEqCol):
                joins.append(pred)
            else:
                local[pred.column.alias].append(pred)
        spine: Node | None = None
        for table, alias in self.relations:
            leaf: Node = Scan(table, alias)
            if local[alias]:
                leaf = Filter(tuple(local[alias]), leaf)
            spine = leaf if spine is None else CrossProduct(spine, leaf)
        assert spine is not None
        aggs = [i for i in items if isinstance(i, AggregateCall)]
        cols = [i for i in items if isinstance(i, ColumnRef)]
        if aggs or group_by:
            missing = [c for c in cols if c not in group_by]
            if missing:
                raise ParseError(f"column {missing[0]} must appear in GROUP BY")
            root: Node = Aggregate(tuple(group_by), tuple(aggs), spine)
        else:
            if star:
                cols = [
                    ColumnRef(a, c) for t, a in self.relations for c in self.schema.table_def(t).column_names
                ]
            root = Project(tuple(cols), spine)
        return LogicalPlan(root, tuple(joins))


def parse_query(text: str, schema: Schema) -> LogicalPlan:
    """Parse ``text`` into an unoptimized logical plan.

    Scans appear in FROM order on a left-deep CrossProduct spine, each with
    its single-relation filters directly above it; join predicates are left
    pending in ``LogicalPlan.join_predicates``.
    """
    return _Parser(text, schema).parse()


# -- JSON -------------------------------------------------------------------


def _pred_to_json(p: Predicate) -> dict:
    if isinstance(p, ColEqLiteral):
        return {"kind": "ColEqLiteral", "column": str(p.column), "value": p.value}
    if isinstance(p, ColCmpLiteral):
        return {"kind": "ColCmpLiteral", "column": str(p.column), "op": p.op, "value": p.value}
    if isinstance(p, ColPrefix):
        return {"kind": "ColPrefix", "column": str(p.column), "prefix": p.prefix}
    return {"kind": "ColEqCol", "left": str(p.left), "right": str(p.right)}


def _node_to_json(n: Node) -> dict:
    if isinstance(n, Scan):
        return {"kind": "Scan", "table": n.table, "alias": n.alias}
    if isinstance(n, MaterializedScan):
        return {"kind": "MaterializedScan", "id": n.id, "columns": list(n.columns)}
    if isinstance(n, Filter):
        return {"kind": "Filter", "predicates": [_pred_to_json(p) for p in n.predicates], "child": _node_to_json(n.child)}
    if isinstance(n, Join):
        return {
            "kind": "Join",
            "predicates": [_pred_to_json(p) for p in n.predicates],
            "left": _node_to_json(n.left),
            "right": _node_to_json(n.right),
        }
    if isinstance(n, CrossProduct):
        return {"kind": "CrossProduct", "left": _node_to_json(n.left), "right": _node_to_json(n.right)}
    if isinstance(n, Project):
        return {"kind": "Project", "columns": [str(c) for c in n.columns], "child": _node_to_json(n.child)}
    if isinstance(n, Aggregate):
        return {
            "kind": "Aggregate",
            "group_by": [str(c) for c in n.group_by],
            "aggregates": [{"func": a.func, "column": str(a.column) if a.column else None} for a in n.aggregates],
            "child": _node_to_json(n.child),
        }
    raise PlanError(f"cannot serialize {type(n).__name__}")


def plan_to_json(plan: LogicalPlan) -> str:
    doc = {
        "version": 1,
        "root": _node_to_json(plan.root),
        "join_predicates": [_pred_to_json(p) for p in plan.join_predicates],
    }
    return json.dumps(doc, indent=2)


def _pred_from_json(d: dict) -> Predicate:
    kind = d.get("kind")
    try:
        if kind == "ColEqLiteral":
            return ColEqLiteral(ColumnRef.parse(d["column"]), d["value"])
        if kind == "ColCmpLiteral":
            return ColCmpLiteral(ColumnRef.parse(d["column"]), d["op"], d["value"])
        if kind == "ColPrefix":
            return ColPrefix(ColumnRef.parse(d["column"]), d["prefix"])
        if kind == "ColEqCol":
            return ColEqCol(ColumnRef.parse(d["left"]), ColumnRef.parse(d["right"]))
    except KeyError as e:
        raise PlanError(f"predicate {kind} missing field {e}") from None
    raise PlanError(f"unknown predicate kind {kind!r}")


def _node_from_json(d: dict) -> Node:
    if not isinstance(d, dict):
        raise PlanError("plan node must be an object")
    kind = d.get("kind")
    try:
        if kind == "Scan":
            return Scan(d["table"], d.get("alias", d["table"]))
        if kind == "MaterializedScan":
            return MaterializedScan(int(d["id"]), tuple(d["columns"]))
        if kind == "Filter":
            return Filter(tuple(_pred_from_json(p) for p in d["predicates"]), _node_from_json(d["child"]))
        if kind == "Join":
            preds = tuple(_pred_from_json(p) for p in d["predicates"])
            if not all(isinstance(p, ColEqCol) for p in preds):
                raise PlanError("Join predicates must be ColEqCol")
            return Join(preds, _node_from_json(d["left"]), _node_from_json(d["right"]))
        if kind == "CrossProduct":
            return CrossProduct(_node_from_json(d["left"]), _node_from_json(d["right"]))
        if kind == "Project":
            return Project(tuple(ColumnRef.parse(c) for c in d["columns"]), _node_from_json(d["child"]))
        if kind == "Aggregate":
            aggs = tuple(
                AggregateCall(a["func"], ColumnRef.parse(a["column"]) if a.get("column") else None)
                for a in d["aggregates"]
            )
            return Aggregate(tuple(ColumnRef.parse(c) for c in d["group_by"]), aggs, _node_from_json(d["child"]))
    except KeyError as e:
        raise PlanError(f"{kind} node missing field {e}") from None
    raise PlanError(f"unknown node kind {kind!r}")


def json_to_plan(text: str, schema: Schema | None = None) -> LogicalPlan:
    """Inverse of :func:`plan_to_json`; validates references when a schema is given."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise PlanError(f"malformed plan document: {e}") from None
    if not isinstance(doc, dict) or "root" not in doc:
        raise PlanError("malformed plan document: missing root")
    plan = LogicalPlan(
        _node_from_json(doc["root"]),
        tuple(_pred_from_json(p) for p in doc.get("join_predicates", [])),
    )
    if any(not isinstance(p, ColEqCol) for p in plan.join_predicates):
        raise PlanError("join_predicates must be ColEqCol")
    _check_references(plan, schema)
    return plan


def _check_references(plan: LogicalPlan, schema: Schema | None) -> None:
    scope: dict[str, str | None] = {}
    cols_by_alias: dict[str, set[str] | None] = {}

    def collect(n: Node) -> None:
        if isinstance(n, Scan):
            if schema is not None and not schema.has_table(n.table):
                raise PlanError(f"unresolved table {n.table!r}")
            if n.alias in scope:
                raise PlanError(f"duplicate alias {n.alias!r}")
            scope[n.alias] = n.table
            cols_by_alias[n.alias] = set(schema.table_def(n.table).column_names) if schema else None
        elif isinstance(n, MaterializedScan):
            for c in n.columns:
                ref = ColumnRef.parse(c)
                cols_by_alias.setdefault(ref.alias, set())
                cols = cols_by_alias[ref.alias]
                if cols is not None:
                    cols.add(ref.column)
                scope[ref.alias] = None
        for c in n.children:
            collect(c)

    collect(plan.root)

    def check(ref: ColumnRef) -> None:
        if ref.alias not in cols_by_alias:
            raise PlanError(f"unresolved reference {ref}")
        cols = cols_by_alias[ref.alias]
        if cols is not None and ref.column not in cols:
            raise PlanError(f"unresolved reference {ref}")

    def refs(n: Node):
        if isinstance(n, (Filter, Join)):
            for p in n.predicates:
                yield from p.columns()
        elif isinstance(n, Project):
            yield from n.columns
        elif isinstance(n, Aggregate):
            yield from n.group_by
            yield from (a.column for a in n.aggregates if a.column is not None)
        for c in n.children:
            yield from refs(c)

    for r in refs(plan.root):
        check(r)
    for p in plan.join_predicates:
        for r in p.columns():
            check(r)
