import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aqplab.cardinality import (
    FALLBACK,
    FALLBACK_SELECTIVITY,
    FEEDBACK,
    STATS,
    CardinalityFeedback,
    CardinalityModel,
    apply_feedback,
    estimate_join,
    estimate_selectivity,
    feedback_for,
)
from aqplab.catalog import Catalog, CatalogError, ColumnStat, ColumnStats
from aqplab.driver import run_vanilla
from aqplab.frontend import parse_query
from aqplab.plan import (
    Aggregate,
    AggregateCall,
    ColCmpLiteral,
    ColEqCol,
    ColEqLiteral,
    ColumnRef,
    Filter,
    Join,
    LogicalPlan,
    MaterializedScan,
    Project,
    Scan,
)
from conftest import tdef
from oracles import nested_loop

X = ColumnRef("t", "x")


def stats(d, lo=None, hi=None, n=1000):
    return ColumnStats(n, {"x": ColumnStat(d, lo, hi)})


def test_eq_is_one_over_distinct():
    assert estimate_selectivity(ColEqLiteral(X, 3), stats(100)) == pytest.approx(0.01)


def test_range_interpolates():
    assert estimate_selectivity(ColCmpLiteral(X, "<", 50), stats(100, 0, 99)) == pytest.approx(0.5)
    assert estimate_selectivity(ColCmpLiteral(X, ">=", 50), stats(100, 0, 99)) == pytest.approx(0.5)
    assert estimate_selectivity(ColCmpLiteral(X, "<", -10), stats(100, 0, 99)) == 0.0
    assert estimate_selectivity(ColCmpLiteral(X, "<=", 500), stats(100, 0, 99)) == 1.0
    assert estimate_selectivity(ColCmpLiteral(X, "!=", 1), stats(4, 0, 99)) == pytest.approx(0.75)


def test_conjunction_multiplies():
    s = ColumnStats(1000, {"x": ColumnStat(10, 0, 9), "y": ColumnStat(10, 0, 9)})
    preds = [ColEqLiteral(X, 1), ColEqLiteral(ColumnRef("t", "y"), 1)]
    assert estimate_selectivity(preds, s) == pytest.approx(0.01)


def test_correlated_pair_true_fraction_is_ten_times_the_estimate():
    # y always equals x, so the joint fraction is 0.1 while independence says 0.01
    c = Catalog()
    x = np.arange(1000) % 10
    c.add_table(tdef("t", [("id", "i"), ("x", "i"), ("y", "i")]), {"id": np.arange(1000), "x": x, "y": x})
    s = c.analyze("t")
    preds = [ColEqLiteral(X, 3), ColEqLiteral(ColumnRef("t", "y"), 3)]
    est = estimate_selectivity(preds, s)
    true = float(np.mean(x == 3))
    assert est == pytest.approx(0.01) and true == pytest.approx(0.1)
    assert true / est == pytest.approx(10)


def test_missing_stats_fall_back():
    assert estimate_selectivity(ColEqLiteral(X, 1), None) == FALLBACK_SELECTIVITY


@pytest.mark.parametrize("args, expected", [((1000, 5000, 1000, 800), 5000), ((0, 700, 10, 20), 0)])
def test_estimate_join_formula(args, expected):
    assert estimate_join(*args) == expected


def test_fk_join_matches_nested_loop_count():
    rng = np.random.default_rng(1)
    t_id = rng.choice(900, 5000)
    t_id[:900] = np.arange(900)  # every one of the 900 keys appears
    c = Catalog()
    c.add_table(tdef("T", [("id", "i")]), {"id": np.arange(1000)})
    c.add_table(tdef("A", [("id", "i"), ("t_id", "i")], [("t_id", "T", "id")]), {"id": np.arange(5000), "t_id": t_id})
    c.analyze("T")
    c.analyze("A")
    est = estimate_join(5000, 1000, c.table("A").stats.distinct("t_id"), c.table("T").stats.distinct("id"))
    plan = parse_query("SELECT COUNT(*) FROM A a, T t WHERE a.t_id = t.id", c)
    assert est == 5000
    assert nested_loop(plan, c) == {(5000,): 1}


@pytest.fixture
def cat():
    c = Catalog()
    c.add_table(tdef("t", [("id", "i"), ("x", "i")]), {"id": np.arange(4200), "x": np.arange(4200) % 10})
    c.add_table(tdef("a", [("id", "i"), ("t_id", "i")], [("t_id", "t", "id")]), {"id": np.arange(300), "t_id": np.arange(300)})
    c.analyze("t")
    c.analyze("a")
    return c


def test_tail_nodes_take_child_estimate(cat):
    m = CardinalityModel(cat)
    filt = Filter((ColEqLiteral(X, 1),), Scan("t", "t"))
    assert m.estimate_node(filt).rows == pytest.approx(420)
    assert m.estimate_node(Project((X,), filt)).rows == pytest.approx(420)
    agg = Aggregate((X,), (AggregateCall("COUNT"),), Scan("t", "t"))
    assert m.estimate_node(agg).rows == pytest.approx(4200)


def test_feedback_gives_exact_rows(cat):
    inter = cat.materialize([(i,) for i in range(37)], ["t.x"])
    apply_feedback(cat, feedback_for(cat, inter.id))
    est = CardinalityModel(cat).estimate_node(MaterializedScan(inter.id, inter.columns))
    assert (est.rows, est.source) == (37, FEEDBACK)


def test_without_monitor_the_prior_estimate_stays(cat):
    inter = cat.materialize([(i,) for i in range(37)], ["t.x"], analyze=False)
    inter.prior_rows, inter.prior_distinct = 500.0, {"t.x": 50.0}
    est = CardinalityModel(cat).estimate_node(MaterializedScan(inter.id, inter.columns))
    assert (est.rows, est.source) == (500.0, STATS)


def test_intermediate_without_prior_or_feedback_is_fallback(cat):
    inter = cat.materialize([(1,)], ["t.x"], analyze=False)
    assert CardinalityModel(cat).estimate_node(MaterializedScan(inter.id, inter.columns)).source == FALLBACK


def test_feedback_row_count_must_match(cat):
    inter = cat.materialize([(1,)], ["t.x"])
    with pytest.raises(CatalogError):
        apply_feedback(cat, CardinalityFeedback(inter.id, 5, {}))


def test_zero_row_feedback_propagates_and_plan_still_runs(cat):
    inter = cat.materialize({"a.t_id": np.zeros(0, dtype=np.int64)}, ["a.t_id"])
    apply_feedback(cat, feedback_for(cat, inter.id))
    join = Join((ColEqCol(ColumnRef("a", "t_id"), ColumnRef("t", "id")),), MaterializedScan(inter.id, inter.columns), Scan("t", "t"))
    assert CardinalityModel(cat).estimate_node(join).rows == 0
    plan = LogicalPlan(Aggregate((), (AggregateCall("COUNT"),), join))
    res, _, _ = run_vanilla(plan, cat)
    assert res.rows() == [(0,)]


def test_join_estimate_is_order_independent(cat):
    m = CardinalityModel(cat)
    p = (ColEqCol(ColumnRef("a", "t_id"), ColumnRef("t", "id")),)
    ab = m.estimate_node(Join(p, Scan("a", "a"), Scan("t", "t"))).rows
    ba = m.estimate_node(Join(p, Scan("t", "t"), Scan("a", "a"))).rows
    assert ab == ba == pytest.approx(300)


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 500), st.integers(0, 99), st.sampled_from(["<", "<=", ">", ">=", "!="]), st.integers(-50, 150))
def test_selectivity_is_a_fraction(d, lo, op, v):
    s = estimate_selectivity(ColCmpLiteral(X, op, v), stats(d, lo, lo + d - 1))
    assert 0.0 <= s <= 1.0


@settings(max_examples=80, deadline=None)
@given(st.floats(0, 1e6), st.floats(0, 1e6), st.floats(1, 1e4), st.floats(1, 1e4))
def test_join_estimate_never_exceeds_cross_product(lr, rr, dl, dr):
    assert 0 <= estimate_join(lr, rr, dl, dr) <= lr * rr + 1e-6
