import json
import time

import pytest

import perfmut.cli as cli
from perfmut.cli import EXIT_FATAL, EXIT_OK, EXIT_UNSOUND, FuzzRun, RunConfig, build_parser, config_from_args, main
from perfmut.ir import Filter
from perfmut.rules import STRUCTURE, MutationRule
from perfmut.validator import validate_report


def fuzz(tmp_path, *flags):
    return main(["fuzz", "--out", str(tmp_path), "--timeout-ms", "2000", *flags])


def stats_of(tmp_path):
    return json.loads((tmp_path / "stats.json").read_text())


def test_zero_pair_budget_is_a_clean_exit(tmp_path):
    assert fuzz(tmp_path, "--pairs", "0") == EXIT_OK
    s = stats_of(tmp_path)
    assert s["pairs_generated"] == 0 and s["reports_emitted"] == 0 and s["finished"]
    assert (tmp_path / "bases.jsonl").read_text() == ""


def test_feedback_none_never_updates(tmp_path):
    assert fuzz(tmp_path, "--pairs", "15", "--feedback", "none", "--seed", "3") == EXIT_OK
    s = stats_of(tmp_path)
    assert s["pairs_generated"] == 15
    assert s["prob_updates"] == 0


def test_feedback_both_updates(tmp_path):
    assert fuzz(tmp_path, "--pairs", "15", "--seed", "3") == EXIT_OK
    assert stats_of(tmp_path)["prob_updates"] > 0


def test_stats_conservation_and_bases_log(tmp_path):
    assert fuzz(tmp_path, "--pairs", "20", "--seed", "1", "--attempts", "5") == EXIT_OK
    s = stats_of(tmp_path)
    assert s["pairs_skipped"] + s["pairs_timed"] == s["pairs_generated"] == 20
    assert s["reports_emitted"] <= s["pairs_timed"] <= s["pairs_generated"]
    assert s["skipped_same_plan"] + s["skipped_explain_failed"] == s["pairs_skipped"]
    bases = [json.loads(line) for line in (tmp_path / "bases.jsonl").read_text().splitlines()]
    assert len(bases) == s["bases_generated"]
    assert [b["index"] for b in bases] == list(range(len(bases)))
    assert sum(len(b["mutants"]) for b in bases) >= 20
    for path in (tmp_path / "reports").glob("report-*.json"):
        validate_report(json.loads(path.read_text()))


def test_tlp_mode_runs(tmp_path):
    assert fuzz(tmp_path, "--pairs", "5", "--mode", "tlp") == EXIT_OK
    bases = [json.loads(line) for line in (tmp_path / "bases.jsonl").read_text().splitlines()]
    assert all(m["rules"] == [] for b in bases for m in b["mutants"])
    assert any("UNION ALL" in m["sql"] for b in bases for m in b["mutants"])


def test_duration_budget_is_respected(tmp_path):
    started = time.monotonic()
    assert fuzz(tmp_path, "--duration", "3", "--timeout-ms", "200") == EXIT_OK
    # overrun bounded by one pair's worst case: timeout x 2 queries x (1 + 3 attempts), doubled for warm-ups
    assert time.monotonic() - started < 3 + 0.2 * 2 * 4 * 2 + 5  # fixture build and sampling on top
    assert stats_of(tmp_path)["finished"]


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"seed": 9, "threshold": 3.0, "pairs": 4, "feedback": "none"}))
    args = build_parser().parse_args(["fuzz", "--config", str(cfg), "--threshold", "2.5"])
    c = config_from_args(args)
    assert (c.seed, c.threshold, c.pairs, c.feedback) == (9, 2.5, 4, "none")
    args = build_parser().parse_args(["fuzz", "--config", str(cfg), "--duration", "10"])
    c = config_from_args(args)
    assert c.duration == 10 and c.pairs is None


def test_defaults():
    c = config_from_args(build_parser().parse_args(["fuzz", "--pairs", "1"]))
    assert (c.threshold, c.timeout_ms, c.validation_attempts, c.attempts, c.mode, c.feedback) == \
           (2.0, 15000.0, 3, 20, "rules", "both")


@pytest.mark.parametrize("kwargs", [
    {"pairs": 1, "threshold": 1.0},
    {"pairs": 1, "timeout_ms": 0},
    {},
    {"pairs": 1, "duration": 5},
    {"pairs": 1, "feedback": "sometimes"},
])
def test_run_config_invariants(kwargs):
    with pytest.raises(ValueError):
        RunConfig(**kwargs)


def test_budget_flags_are_exclusive():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["fuzz", "--pairs", "1", "--duration", "1"])


def test_fatal_errors_exit_one(tmp_path):
    assert fuzz(tmp_path, "--pairs", "1", "--rules", "999") == EXIT_FATAL
    assert fuzz(tmp_path, "--pairs", "1", "--dbms", "postgres", "--dsn", "host=/nonexistent") == EXIT_FATAL
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"pairs": 1, "colour": "red"}))
    assert main(["fuzz", "--config", str(bad)]) == EXIT_FATAL


def test_empty_database_without_fixture_is_fatal(tmp_path):
    db = tmp_path / "empty.db"
    assert main(["fuzz", "--pairs", "1", "--dsn", str(db), "--out", str(tmp_path / "o")]) == EXIT_FATAL


def test_unsound_mutant_exits_two(tmp_path, monkeypatch):
    drop_filter = MutationRule(901, STRUCTURE, "drop filter (unsound)", lambda n, s: isinstance(n, Filter),
                               lambda n, s: n.child)
    monkeypatch.setattr(cli, "select_rules", lambda ids=None: (drop_filter,))
    code = fuzz(tmp_path, "--pairs", "40", "--seed", "2")
    s = stats_of(tmp_path)
    assert s["soundness_violations"] > 0
    assert code == EXIT_UNSOUND
    assert (tmp_path / "violations.jsonl").read_text().count("\n") == s["soundness_violations"]


def test_fuzz_run_accepts_an_adapter(small_db, tmp_path):
    adapter, _, _ = small_db
    stats = FuzzRun(RunConfig(pairs=3, out=str(tmp_path), timeout_ms=2000), adapter).run()
    assert stats.finished and stats.pairs_generated == 3 and stats.conserved()


def test_fixture_and_analysis_subcommands(tmp_path, capsys):
    assert main(["fixture", "--scale", "0.001", "--dump-fixture", str(tmp_path / "csv")]) == EXIT_OK
    counts = json.loads(capsys.readouterr().out)
    assert set(counts) == {"emp", "dept", "bonus"}
    assert (tmp_path / "csv" / "emp.csv").exists()

    run = tmp_path / "run"
    assert fuzz(run, "--pairs", "10", "--seed", "4") == EXIT_OK
    capsys.readouterr()
    assert main(["analyze-cooccurrence", str(run)]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["queries"] == stats_of(run)["bases_generated"]
    assert main(["analyze-rules", str(run / "reports")]) == EXIT_OK
    json.loads(capsys.readouterr().out)


def test_replay_subcommand(tmp_path, capsys):
    report = {"base_sql": "SELECT sal FROM emp WHERE empno = 5",
              "mutant_sql": "SELECT sal FROM emp WHERE CAST(empno AS INTEGER) = 5",
              "threshold": 2.0, "seed": 0, "fixture": {"scale": 0.01, "seed": 0}}
    path = tmp_path / "r.json"
    path.write_text(json.dumps(report))
    assert main(["replay", str(path), "--validation-attempts", "1"]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert set(out) == {"initial_ratio", "slower", "confirmation_ratios", "reproduced"}
