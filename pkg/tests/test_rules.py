"""Golden tests: each rule on its printed working example, plus guards."""
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perfmut.catalog import SCOTT_SCHEMA, ValueSample
from perfmut.generator import build_specification, init_probability_table
from perfmut.ir import (
    DATETIME, FALSE, INTEGER, STRING, TRUE,
    AggCall, Aggregate, Arith, BoolOp, Compare, Distinct, Filter, IsTest, Item, Join, Limit,
    Not, Project, Sort, SortKey, Union, and_, cast, extract, item, lit, plan_equal, walk,
)
from perfmut.mutator import apply_rule
from perfmut.rules import CATALOG, RULES_BY_ID, known_constants, provably_empty, select_rules
from golden import GOLDEN, t1, t2, ts
from plans import col, emp


def rewrite(rule_id, plan, schema=None):
    return apply_rule(plan, RULES_BY_ID[rule_id], schema)


# -- Table 3 ---------------------------------------------------------------

@pytest.mark.parametrize("rule_id", sorted(GOLDEN))
def test_golden_rewrite(rule_id):
    before, after = GOLDEN[rule_id]()
    assert plan_equal(rewrite(rule_id, before), after)


def test_rule0_guards():
    c = col("t1", "c")
    # SUM is not duplicate-insensitive
    summed = Aggregate((c,), (Item(AggCall("SUM", col("t2", "d"), INTEGER), None, "s"),),
                       Join("INNER", t1(), t2(), TRUE))
    assert rewrite(0, summed) is summed
    # join condition reads a left column that is not a grouping key
    cond = Compare("=", col("t1", "c1"), ts("2021-01-01 00:00:00"))
    off_key = Aggregate((c,), (), Join("INNER", t1(), t2(), cond))
    assert rewrite(0, off_key) is off_key


def test_rule13_keeps_aggregate_conjuncts():
    c = col("t1", "c")
    agg = Aggregate((c,), (Item(AggCall("COUNT", None, INTEGER), None, "n"),), t1())
    n_pred = Compare(">", col(None, "n"), lit(1))
    before = Filter(and_(Compare(">", c, lit(0)), n_pred), agg)
    after = Filter(n_pred, Aggregate(agg.keys, agg.aggs, Filter(Compare(">", c, lit(0)), t1())))
    assert plan_equal(rewrite(13, before), after)


def test_rule16_keeps_right_side_conjunct_above_left_join():
    pred = Compare("=", col("t2", "d"), lit(5))
    before = Filter(pred, Join("LEFT", t1(), t2(), Compare("=", col("t1", "c"), col("t2", "c"))))
    assert rewrite(16, before) is before


def test_rule51_needs_provable_emptiness():
    before = Sort((SortKey(col("t1", "c")),), Filter(Compare("=", col("t1", "c"), lit(1)), t1()))
    assert rewrite(51, before) is before


def test_rule59_requires_left_join():
    before = Limit(5, Join("INNER", t1(), t2(), TRUE))
    assert rewrite(59, before) is before


def test_rule59_does_not_repeat():
    once = rewrite(59, Limit(5, Join("LEFT", t1(), t2(), TRUE)))
    assert rewrite(59, once) is once


@pytest.mark.parametrize("op, expected", [
    ("=", lambda c: and_(Compare(">=", c, ts("2021-01-01 00:00:00")), Compare("<", c, ts("2022-01-01 00:00:00")))),
    ("<>", lambda c: BoolOp("OR", (Compare("<", c, ts("2021-01-01 00:00:00")),
                                   Compare(">=", c, ts("2022-01-01 00:00:00"))))),
    ("<=", lambda c: Compare("<", c, ts("2022-01-01 00:00:00"))),
    (">", lambda c: Compare(">=", c, ts("2022-01-01 00:00:00"))),
    (">=", lambda c: Compare(">=", c, ts("2021-01-01 00:00:00"))),
])
def test_rule15_operators(op, expected):
    c1 = col("t1", "c1", DATETIME)
    out = rewrite(15, Filter(Compare(op, extract("YEAR", c1), lit(2021)), t1()))
    assert plan_equal(out, Filter(expected(c1), t1()))


def test_rule15_literal_on_the_left():
    c1 = col("t1", "c1", DATETIME)
    out = rewrite(15, Filter(Compare(">", lit(2021), extract("YEAR", c1)), t1()))
    assert plan_equal(out, Filter(Compare("<", c1, ts("2021-01-01 00:00:00")), t1()))


@pytest.mark.parametrize("a, op, b, folded", [(-7, "/", 2, -3), (7, "/", -2, -3), (3, "-", 5, -2), (4, "*", 6, 24)])
def test_rule54_integer_semantics(a, op, b, folded):
    c = col("t1", "c")
    out = rewrite(54, Filter(Compare("=", c, Arith(op, lit(a), lit(b))), t1()))
    assert plan_equal(out, Filter(Compare("=", c, lit(folded)), t1()))


def test_rule54_skips_division_by_zero():
    before = Filter(Compare("=", col("t1", "c"), Arith("/", lit(1), lit(0))), t1())
    assert rewrite(54, before) is before


def test_rule55_known_constant_into_join_condition():
    c = col("t1", "c")
    left = Filter(Compare("=", c, lit(7)), t1())
    before = Join("INNER", left, t2(), Compare("=", c, col("t2", "d")))
    after = Join("INNER", left, t2(), Compare("=", lit(7), col("t2", "d")))
    assert plan_equal(rewrite(55, before), after)


def test_rule55_ignores_right_constants_above_left_join():
    d = col("t2", "d")
    right = Filter(Compare("=", d, lit(3)), t2())
    join = Join("LEFT", t1(), right, Compare("=", col("t1", "c"), col("t2", "c")))
    before = Filter(Compare(">", d, col("t1", "c")), join)
    assert rewrite(55, before) is before


# -- additional rules ------------------------------------------------------

def test_rule100_projection_literal():
    job, deptno = col("emp", "job", STRING), col("emp", "deptno")
    filtered = Filter(Compare("=", job, lit("Technical")), emp())
    before = Project((item(job), item(deptno)), filtered)
    after = Project((Item(cast(lit("Technical"), STRING, 10), "emp", "job"), item(deptno)), filtered)
    assert plan_equal(rewrite(100, before), after)


def test_rule101_and_102_are_inverse():
    a, b = Compare("=", col("t1", "c"), lit(1)), Compare(">", col("t1", "c1", DATETIME), ts("2000-01-01 00:00:00"))
    merged = Filter(and_(a, b), t1())
    split = rewrite(101, merged)
    assert plan_equal(split, Filter(a, Filter(b, t1())))
    assert plan_equal(rewrite(102, split), merged)


def test_rule103_commutes_and_restores_columns():
    join = Join("INNER", t1(), t2(), TRUE)
    out = rewrite(103, join)
    assert isinstance(out, Project) and plan_equal(out.child, Join("INNER", t2(), t1(), TRUE))
    assert [i.key for i in out.items] == [("t1", "c"), ("t1", "c1"), ("t2", "c"), ("t2", "d")]
    left = Join("LEFT", t1(), t2(), TRUE)
    assert rewrite(103, left) is left


def test_rule104_pull_filter_above_project():
    c = col("t1", "c")
    pred = Compare(">", c, lit(0))
    before = Project((item(c),), Filter(pred, t1()))
    assert plan_equal(rewrite(104, before), Filter(pred, Project((item(c),), t1())))


def test_rule105_limit_zero():
    assert plan_equal(rewrite(105, Limit(0, t1())), Filter(FALSE, t1()))
    one = Limit(1, t1())
    assert rewrite(105, one) is one


def test_rule106_drop_group_by_on_unique_key():
    pk = col("emp", "emp_pk")
    pred = Filter(Compare(">", pk, lit(100)), emp())
    assert plan_equal(rewrite(106, Aggregate((pk,), (), pred), SCOTT_SCHEMA), Project((item(pk),), pred))


def test_rule106_needs_unique_non_null_key():
    job = col("emp", "job", STRING)
    grouped = Aggregate((job,), (), emp())
    assert rewrite(106, grouped, SCOTT_SCHEMA) is grouped
    # without a schema nothing is provable
    pk = col("emp", "emp_pk")
    by_pk = Aggregate((pk,), (), emp())
    assert rewrite(106, by_pk, None) is by_pk


def test_rule106_distinct_over_key_projection():
    empno, ename = col("emp", "empno"), col("emp", "ename", STRING)
    proj = Project((item(empno), item(ename)), emp())
    assert plan_equal(rewrite(106, Distinct(proj), SCOTT_SCHEMA), proj)


def test_rule107_prunes_empty_branch():
    c = col("t1", "c")
    keep = Project((item(c),), t1())
    empty = Project((item(c),), Filter(FALSE, t1()))
    assert plan_equal(rewrite(107, Union(True, keep, empty)), keep)
    assert plan_equal(rewrite(107, Union(False, keep, empty)), Distinct(keep))


def test_rule108_drops_is_true_in_filter():
    pred = Compare("=", col("t1", "c"), lit(3))
    assert plan_equal(rewrite(108, Filter(IsTest("TRUE", pred), t1())), Filter(pred, t1()))
    # under NOT, IS TRUE is not droppable: NULL would flip to NULL instead of TRUE
    nested = Filter(Not(IsTest("TRUE", pred)), t1())
    assert rewrite(108, nested) is nested


# -- analyses --------------------------------------------------------------

def test_provably_empty():
    assert provably_empty(Filter(FALSE, t1()))
    assert provably_empty(Limit(0, t1()))
    assert provably_empty(Join("INNER", t1(), Filter(FALSE, t2()), TRUE))
    assert not provably_empty(Join("LEFT", t1(), Filter(FALSE, t2()), TRUE))
    assert not provably_empty(Aggregate((), (Item(AggCall("COUNT", None, INTEGER), None, "n"),), Filter(FALSE, t1())))


def test_known_constants_through_left_join():
    c, d = col("t1", "c"), col("t2", "d")
    join = Join("LEFT", Filter(Compare("=", c, lit(1)), t1()), Filter(Compare("=", d, lit(2)), t2()), TRUE)
    assert known_constants(join) == {c: lit(1)}


def test_select_rules():
    assert [r.id for r in select_rules([15, 55])] == [15, 55]
    assert select_rules() == CATALOG
    with pytest.raises(ValueError):
        select_rules([999])


def test_catalog_covers_required_rules():
    assert {0, 13, 15, 16, 51, 54, 55, 59} <= set(RULES_BY_ID)
    assert len({r.id for r in CATALOG}) == len(CATALOG)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from([r.id for r in CATALOG]))
def test_condition_guard(seed, rule_id):
    rule = RULES_BY_ID[rule_id]
    plan = build_specification(SCOTT_SCHEMA, ValueSample({}), init_probability_table(), random.Random(seed))
    if not any(rule.condition(n, SCOTT_SCHEMA) for n in walk(plan)):
        assert apply_rule(plan, rule, SCOTT_SCHEMA) is plan
