import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perfmut.catalog import SchemaMetadata, ValueSample
from perfmut.generator import (
    CHOICE_POINTS, DELTA, ENTITY_SLOTS, P_MIN, GenerationExhausted,
    RuleActivationFrequencyTable, build_specification, extract_entities, grammar_problems,
    init_probability_table, reward, update_from_mutator, update_from_validator,
)
from perfmut.ir import (
    TRUE, Aggregate, Compare, Join, Literal, Limit, Union, node_exprs, type_check, walk,
    walk_expr,
)
from plans import emp, listing1, t_scan

EMPTY = ValueSample({})


def busy_freq():
    # rule 1 sits well above the lowest quartile, so it earns the plain increment
    return RuleActivationFrequencyTable({1: 10, 2: 0, 3: 0, 4: 0})


def forced(prob, point, alt):
    k = len(prob.points[point])
    dist = {a: (1 - P_MIN * (k - 1) if a == alt else P_MIN) for a in prob.points[point]}
    return prob.with_point(point, dist)


def test_grammar_is_well_formed():
    assert grammar_problems() == []
    for point, alt in ENTITY_SLOTS.values():
        assert alt in CHOICE_POINTS[point]


def test_published_defaults():
    prob = init_probability_table()
    assert prob.points["table_ref"] == {"table_simple": 0.5, "LEFT": 0.16, "CROSS": 0.17, "INNER": 0.17}
    assert prob.points["join_cond"] == {"bool_expr": 0.5, "TRUE": 0.5}
    assert prob.points["bool_op"] == {"leaf": 0.25, "AND": 0.25, "OR": 0.25, "NOT": 0.25}
    assert prob.problems() == []


def test_listing1_entities():
    assert extract_entities(listing1()) == {"table_simple", "WHERE", "GROUP BY", "LIMIT"}


def test_bare_scan_entities():
    assert extract_entities(emp()) == {"table_simple"}


def test_left_join_entities():
    assert extract_entities(Join("LEFT", t_scan("t1"), t_scan("t2"), None)) == {"table_simple", "LEFT"}
    assert extract_entities(Join("LEFT", t_scan("t1"), t_scan("t2"), TRUE)) == {"table_simple", "LEFT", "TRUE"}


def test_mutator_update_by_hand():
    # siblings hold 0.5 and must give up 0.05: each keeps 0.45 / 0.5 = 90%
    prob, freq = update_from_mutator(listing1(), [1], init_probability_table(), busy_freq())
    t = prob.points["table_ref"]
    assert t["table_simple"] == pytest.approx(0.55, abs=1e-12)
    assert t["LEFT"] == pytest.approx(0.144, abs=1e-12)
    assert t["CROSS"] == pytest.approx(0.153, abs=1e-12)
    assert t["INNER"] == pytest.approx(0.153, abs=1e-12)
    assert prob.points["limit"]["present"] == pytest.approx(0.55, abs=1e-12)
    assert prob.points["join_cond"] == init_probability_table().points["join_cond"]
    assert freq.counts[1] == 11


def test_rare_rule_earns_double_increment():
    prob, _ = update_from_mutator(listing1(), [2], init_probability_table(), busy_freq())
    assert prob.points["table_ref"]["table_simple"] == pytest.approx(0.5 + 2 * DELTA, abs=1e-12)


def test_empty_applied_rules_is_identity():
    prob, freq = init_probability_table(), busy_freq()
    assert update_from_mutator(listing1(), [], prob, freq) == (prob, freq)


def test_clamped_entity_is_unchanged():
    prob = forced(init_probability_table(), "table_ref", "table_simple")
    out, _ = update_from_mutator(emp(), [1], prob, busy_freq())
    assert out.points["table_ref"] == prob.points["table_ref"]


def test_validator_update_is_stronger_and_monotone():
    prob = init_probability_table()
    a = update_from_validator(listing1(), prob)
    b = update_from_validator(listing1(), a)
    m, _ = update_from_mutator(listing1(), [1], prob, busy_freq())
    p0, p1, p2 = (x.points["limit"]["present"] for x in (prob, a, b))
    assert p0 < p1 < p2
    assert p1 > m.points["limit"]["present"]


def test_validator_update_at_ceilings_is_unchanged():
    prob = init_probability_table()
    for point, alt in [("table_ref", "table_simple"), ("where", "present"), ("group_by", "present"),
                       ("limit", "present")]:
        prob = forced(prob, point, alt)
    assert update_from_validator(listing1(), prob) == prob


def test_floors_hold_under_repeated_rewards():
    prob = init_probability_table()
    for _ in range(200):
        prob = update_from_validator(Join("LEFT", t_scan("t1"), t_scan("t2"), TRUE), prob)
    assert prob.problems() == []
    assert min(prob.points["table_ref"].values()) == pytest.approx(P_MIN)


@st.composite
def update_sequences(draw):
    entities = list(ENTITY_SLOTS)
    return draw(st.lists(st.tuples(st.sets(st.sampled_from(entities), max_size=6), st.booleans()),
                         min_size=1, max_size=40))


@settings(max_examples=200, deadline=None)
@given(update_sequences())
def test_normalization_property(seq):
    prob = init_probability_table()
    for entities, strong in seq:
        prob = reward(prob, entities, 0.10 if strong else DELTA)
        assert prob.problems() == [], prob.points


def test_frequency_quartile():
    freq = RuleActivationFrequencyTable({1: 0, 2: 5, 3: 9, 4: 20})
    # inclusive quartiles of [0, 5, 9, 20]: q1 = 3.75
    assert freq.lowest_quartile(1)
    assert not freq.lowest_quartile(2)
    assert freq.lowest_quartile(99)  # never fired


def query_specs(plan):
    while not isinstance(plan, Union) and plan.children():
        plan = plan.children()[0]
    return plan.children() if isinstance(plan, Union) else (plan,)


def test_build_specification_type_checks(small_db):
    _, schema, samples = small_db
    rng = random.Random(0)
    for _ in range(200):
        plan = build_specification(schema, samples, init_probability_table(), rng)
        ok, diags = type_check(plan, schema)
        assert ok, diags
        for spec in query_specs(plan):
            assert sum(isinstance(n, Join) for n in walk(spec)) <= 3


def test_generation_is_deterministic(small_db):
    _, schema, samples = small_db
    prob = init_probability_table()
    a = [build_specification(schema, samples, prob, random.Random(5)) for _ in range(3)]
    r1, r2 = random.Random(11), random.Random(11)
    assert [build_specification(schema, samples, prob, r1) for _ in range(30)] == \
           [build_specification(schema, samples, prob, r2) for _ in range(30)]
    assert a[0] == a[1] == a[2]


def test_forced_group_by_limit_single_table(small_db):
    # oracle: three independent draws pinned at 0.98 co-occur with probability 0.98**3
    _, schema, samples = small_db
    prob = init_probability_table()
    for point, alt in [("table_ref", "table_simple"), ("group_by", "present"), ("limit", "present")]:
        prob = forced(prob, point, alt)
    rng = random.Random(1)
    hits = 0
    for _ in range(1000):
        plan = build_specification(schema, samples, prob, rng)
        nodes = list(walk(plan))
        hits += (isinstance(plan, Limit) and any(isinstance(n, Aggregate) and n.keys for n in nodes)
                 and not any(isinstance(n, Join) for n in nodes))
    assert hits / 1000 >= 0.9


def test_join_cond_true_is_degenerate(small_db):
    _, schema, samples = small_db
    prob = forced(init_probability_table(), "table_ref", "INNER")
    prob = prob.with_point("join_cond", {"bool_expr": 0.0, "TRUE": 1.0})
    rng = random.Random(2)
    seen = 0
    for _ in range(200):
        for n in walk(build_specification(schema, samples, prob, rng)):
            if isinstance(n, Join) and n.kind != "CROSS":
                assert n.condition == TRUE
                seen += 1
    assert seen > 100


def test_empty_schema_is_exhausted():
    with pytest.raises(GenerationExhausted):
        build_specification(SchemaMetadata(()), EMPTY, init_probability_table(), random.Random(0))


def test_literals_come_from_samples(small_db):
    _, schema, samples = small_db
    sampled = {v for s in samples.columns.values() for v in s.values} | \
              {s.min for s in samples.columns.values()} | {s.max for s in samples.columns.values()}
    prob = init_probability_table()
    prob = prob.with_point("predicate", {k: (1.0 if k == "comparison" else 0.0) for k in prob.points["predicate"]})
    prob = prob.with_point("where", {"present": 1.0, "absent": 0.0})
    rng = random.Random(4)
    for _ in range(100):
        for n in walk(build_specification(schema, samples, prob, rng)):
            for e in node_exprs(n):
                for x in walk_expr(e):
                    if isinstance(x, Compare) and isinstance(x.right, Literal):
                        assert x.right.value in sampled
