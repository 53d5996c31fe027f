import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from aqplab.catalog import Catalog
from aqplab.frontend import ParseError, json_to_plan, parse_query, plan_to_json
from aqplab.plan import (
    Aggregate,
    AggregateCall,
    ColEqCol,
    ColEqLiteral,
    ColPrefix,
    ColumnRef,
    CrossProduct,
    Filter,
    PlanError,
    Project,
    Scan,
)
from conftest import tdef


@pytest.fixture
def schema():
    c = Catalog()
    c.add_table(tdef("t", [("id", "i"), ("x", "i"), ("name", "t")]), {"id": [1], "x": [1], "name": ["a"]})
    c.add_table(tdef("a", [("id", "i"), ("t_id", "i"), ("x", "i"), ("name", "t")], [("t_id", "t", "id")]),
                {"id": [1], "t_id": [1], "x": [5], "name": ["ab"]})
    return c


def test_count_with_join_and_filter(schema):
    p = parse_query("SELECT COUNT(*) FROM a, t WHERE a.t_id = t.id AND a.x = 5", schema)
    assert p.root == Aggregate(
        (), (AggregateCall("COUNT"),),
        CrossProduct(Filter((ColEqLiteral(ColumnRef("a", "x"), 5),), Scan("a", "a")), Scan("t", "t")),
    )
    assert p.join_predicates == (ColEqCol(ColumnRef("a", "t_id"), ColumnRef("t", "id")),)


def test_min_over_scan(schema):
    p = parse_query("SELECT MIN(t.x) FROM t", schema)
    assert p.root == Aggregate((), (AggregateCall("MIN", ColumnRef("t", "x")),), Scan("t", "t"))


def test_prefix_like(schema):
    p = parse_query("SELECT * FROM a WHERE a.name LIKE 'ab%'", schema)
    assert isinstance(p.root, Project)
    assert p.root.child == Filter((ColPrefix(ColumnRef("a", "name"), "ab"),), Scan("a", "a"))


def test_aliases_and_group_by(schema):
    p = parse_query("SELECT x1.name, COUNT(*) FROM a AS x1, a x2 WHERE x1.id = x2.id GROUP BY x1.name", schema)
    assert isinstance(p.root, Aggregate)
    assert p.root.group_by == (ColumnRef("x1", "name"),)


@pytest.mark.parametrize("sql", [
    "SELECT * FROM zz",
    "SELECT * FROM a WHERE a.nope = 1",
    "SELEC x",
    "SELECT * FROM a WHERE a.name LIKE '%b'",
    "SELECT * FROM a WHERE a.x = b.y",
    "SELECT * FROM a WHERE a.x = 1 OR a.x = 2",
])
def test_rejects(schema, sql):
    with pytest.raises(ParseError):
        parse_query(sql, schema)


def test_unknown_node_kind():
    with pytest.raises(PlanError, match="Bogus"):
        json_to_plan('{"version": 1, "root": {"kind": "Bogus"}}')


QUERIES = [
    "SELECT COUNT(*) FROM a, t WHERE a.t_id = t.id AND a.x = 5",
    "SELECT MIN(t.x), MAX(t.name) FROM t WHERE t.x >= 3 AND t.x != 4",
    "SELECT * FROM a WHERE a.name LIKE 'ab%'",
    "SELECT a.name, SUM(a.x) FROM a, t WHERE a.t_id = t.id AND t.x < 9 GROUP BY a.name",
    "SELECT a.id, t.name FROM a, t WHERE a.t_id = t.id",
]


@pytest.mark.parametrize("sql", QUERIES)
def test_json_round_trip(schema, sql):
    p = parse_query(sql, schema)
    assert json_to_plan(plan_to_json(p), schema) == p


@settings(max_examples=50, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.integers(-1000, 1000), st.sampled_from(["<", "<=", ">", ">=", "!=", "="]), st.text("abc", max_size=3))
def test_round_trip_literals(schema, value, op, prefix):
    sql = f"SELECT COUNT(*) FROM t WHERE t.x {op} {value} AND t.name LIKE '{prefix}%'"
    p = parse_query(sql, schema)
    assert json_to_plan(plan_to_json(p)) == p


def test_fig2_plan_fixture(workloads):
    from aqplab.splitter_dag import build_dag, find_split_points

    out, _ = workloads("fig2")
    c = Catalog()
    c.load_directory(out)
    plan = json_to_plan((out / "queries" / "fig2.plan.json").read_text(), c)
    assert plan == parse_query((out / "queries" / "fig2.sql").read_text(), c)
    assert find_split_points(build_dag(plan, c)) == ["t"]
