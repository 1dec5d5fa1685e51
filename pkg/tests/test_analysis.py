import json

import pytest

from perfmut.analysis import analyze_cooccurrence, analyze_rules, clause_set
from perfmut.ir import (
    INTEGER, STRING, AggCall, Aggregate, Compare, Distinct, Filter, Item, Join, Limit, Project, Union, item, lit,
)
from plans import col, emp, listing1, t_scan


def write_report(directory, name, rules, base_ms=10.0, mutant_ms=30.0):
    samples = [{"query": "base", "duration_ms": base_ms, "run_index": 0, "position": 0, "timed_out": False},
               {"query": "mutant", "duration_ms": mutant_ms, "run_index": 0, "position": 1, "timed_out": False}]
    (directory / f"report-0-{name}.json").write_text(json.dumps({"applied_rules": rules, "samples": samples}))


def test_single_report_rules_have_frequency_one(tmp_path):
    write_report(tmp_path, 1, [22, 16])
    table = analyze_rules(tmp_path)
    assert set(table) == {16, 22}
    assert all(t.frequency == 1.0 for t in table.values())


def test_empty_directory(tmp_path):
    assert analyze_rules(tmp_path) == {}


def test_hand_built_corpus_frequency(tmp_path):
    # rule 59 in 4 of 10 reports; rule 15 in all of them
    for i in range(10):
        write_report(tmp_path, i, [15, 59] if i < 4 else [15])
    table = analyze_rules(tmp_path)
    assert table[59].frequency == pytest.approx(0.4)
    assert table[15].frequency == 1.0


def test_ratio_axis_convention(tmp_path):
    write_report(tmp_path, 1, [13], base_ms=10.0, mutant_ms=40.0)
    write_report(tmp_path, 2, [13], base_ms=30.0, mutant_ms=10.0)
    # above 1 means the mutant ran faster
    assert sorted(analyze_rules(tmp_path)[13].ratios) == [0.25, 3.0]


def test_malformed_report_is_skipped(tmp_path, caplog):
    write_report(tmp_path, 1, [54])
    (tmp_path / "report-0-2.json").write_text("{not json")
    (tmp_path / "report-0-3.json").write_text(json.dumps({"samples": []}))
    table = analyze_rules(tmp_path)
    assert table[54].frequency == 1.0
    assert sum("skipping" in r.message for r in caplog.records) == 2


def test_listing1_group_by_limit_cell():
    clauses, m = analyze_cooccurrence([listing1()])
    assert m["GROUP BY"]["LIMIT"] == m["LIMIT"]["GROUP BY"] == 1.0
    assert m["WHERE"]["WHERE"] == 1.0


def test_empty_corpus():
    assert analyze_cooccurrence([]) == ([], {})


def test_cooccurrence_normalisation():
    joined = Aggregate((col("t1", "c0"),), (), Join("INNER", t_scan("t1"), t_scan("t2"), Compare("=", col("t1", "c0"),
                                                                                              col("t2", "c0"))))
    clauses, m = analyze_cooccurrence([joined, emp()])
    assert m["JOIN"]["GROUP BY"] == m["GROUP BY"]["JOIN"] == 0.5
    assert m["INNER JOIN"]["GROUP BY"] == 0.5
    assert all(m[a][b] == m[b][a] for a in clauses for b in clauses)


def test_functions_merge_into_one_clause():
    sal = col("emp", "sal")
    agg = Aggregate((col("emp", "job", STRING),),
                    (Item(AggCall("COUNT", None, INTEGER), None, "n"), Item(AggCall("MAX", sal, INTEGER), None, "m")),
                    emp())
    having = Filter(Compare(">", col("", "n"), lit(1)), agg)
    s = clause_set(having)
    assert {"FUNC", "GROUP BY", "HAVING"} <= s
    assert not any(name in s for name in ("COUNT", "MAX"))


def test_set_operations_and_distinct():
    p = Project((item(col("emp", "sal")),), emp())
    assert "UNION ALL" in clause_set(Union(True, p, p))
    assert "UNION" in clause_set(Union(False, p, p))
    assert "DISTINCT" in clause_set(Distinct(p))
    assert "LIMIT" in clause_set(Limit(3, p))
