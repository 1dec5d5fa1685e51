import random

import pytest

from perfmut.catalog import SCOTT_SCHEMA
from perfmut.generator import P_MIN, build_specification
from perfmut.ir import STRING, Compare, Distinct, Filter, Join, Project, item
from perfmut.mutator import NotPartitionable, tlp_pair
from perfmut.render import render_sql
from perfmut.tlp import TLPConfig, TLPResult, run_tlp_comparison, tlp_probability_table
from perfmut.validator import ValidatorConfig, validate_pair
from plans import col, emp


def test_tlp_table_favours_partitionable_bases():
    prob = tlp_probability_table()
    assert prob.problems() == []
    assert prob.points["where"]["present"] == pytest.approx(1 - P_MIN)
    for point in ("limit", "order_by", "union"):
        assert prob.points[point]["absent"] == pytest.approx(1 - P_MIN * (len(prob.points[point]) - 1))


def test_tlp_table_yields_mostly_partitionable_bases(small_db):
    _, schema, samples = small_db
    rng = random.Random(0)
    ok = 0
    for _ in range(200):
        try:
            tlp_pair(build_specification(schema, samples, tlp_probability_table(), rng))
            ok += 1
        except NotPartitionable:
            pass
    assert ok >= 60


def test_config_and_result_helpers():
    with pytest.raises(ValueError):
        TLPConfig(target=0)
    r = TLPResult(confirmed=[("mutant", 4.0), ("mutant", 2.0), ("base", 3.0), ("mutant", 3.0)])
    assert r.mutant_slower_share == 0.75
    assert r.mean_ratio() == 3.0
    assert TLPResult().mutant_slower_share == 0.0 and TLPResult().mean_ratio() == 0.0


def test_small_run_on_shared_fixture(small_db):
    adapter, _, _ = small_db
    r = run_tlp_comparison(TLPConfig(target=2, timeout_ms=300.0), adapter)
    assert len(r.confirmed) == 2
    assert sum(r.statuses.values()) >= 2
    assert r.statuses["unsound"] == 0


def test_time_budget_stops_the_run(small_db):
    adapter, _, _ = small_db
    r = run_tlp_comparison(TLPConfig(target=10_000, max_seconds=1.0), adapter)
    assert len(r.confirmed) < 10_000
    assert r.seconds < 1.0 + 4 * 300.0 * 2 * 2 / 1000 + 1.0


def test_distinct_join_partition_runs_faster(small_db):
    # the engine picks a worse join order for SELECT DISTINCT than for the UNION branches
    adapter, _, _ = small_db
    cond = Compare(">=", col("emp", "deptno"), col("emp_1", "empno"))
    join = Join("INNER", emp(), SCOTT_SCHEMA.scan("emp", "emp_1"), cond)
    items = (item(col("emp_1", "job", STRING)), item(col("emp_1", "emp_pk")), item(col("emp", "sal")))
    base = Distinct(Project(items, Filter(Compare(">", col("emp", "job", STRING), col("emp_1", "job", STRING)), join)))
    unfiltered, mutant = tlp_pair(base)
    assert "DISTINCT" in render_sql(unfiltered) and "UNION" in render_sql(mutant)
    v = validate_pair(unfiltered, mutant, adapter, ValidatorConfig(timeout_ms=5000), random.Random(0))
    assert v.status == "confirmed" and v.slower == "base", (v.status, v.ratio, v.slower)
