"""Command-line entry point: fuzz loop, fixture management, replay and analyses."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import random
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .adapters import AdapterError, DBConnectionError, make_adapter
from .analysis import analyze_cooccurrence, analyze_rules
from .catalog import FixtureSpec, build_fixture_rows, dump_fixture_csv, generate_fixture, retrieve_metadata, sample_values
from .generator import (
    DELTA, DELTA_VALIDATOR, RuleActivationFrequencyTable, build_specification, init_probability_table,
    update_from_mutator, update_from_validator,
)
from .ir import from_json, to_json
from .mutator import DEFAULT_ATTEMPTS, NotPartitionable, QueryPair, mutate_query, tlp_pair
from .render import render_sql
from .rules import select_rules
from .tlp import tlp_probability_table
from .validator import (
    DEFAULT_THRESHOLD, DEFAULT_TIMEOUT_MS, DEFAULT_VALIDATION_ATTEMPTS, ValidatorConfig, confirm,
    gen_bug_report, pair_ratio, run_pair, validate_pair,
)

log = logging.getLogger("perfmut")

EXIT_OK, EXIT_FATAL, EXIT_UNSOUND = 0, 1, 2
FEEDBACK = {"none": (False, False), "mutator": (True, False), "validator": (False, True), "both": (True, True)}


@dataclass
class RunConfig:
    dbms: str = "embedded"
    dsn: Optional[str] = None
    seed: int = 0
    duration: Optional[float] = None
    pairs: Optional[int] = None
    threshold: float = DEFAULT_THRESHOLD
    timeout_ms: float = DEFAULT_TIMEOUT_MS
    validation_attempts: int = DEFAULT_VALIDATION_ATTEMPTS
    attempts: int = DEFAULT_ATTEMPTS
    feedback: str = "both"
    mode: str = "rules"
    scale: float = 0.01
    fixture_seed: int = 0
    generate_fixture: bool = False
    rules: Optional[list] = None
    out: str = "perfmut-out"
    dump_prob_table: Optional[str] = None

    def __post_init__(self):
        if not self.threshold > 1:
            raise ValueError("threshold must exceed 1")
        if not self.timeout_ms > 0:
            raise ValueError("timeout must be positive")
        if (self.duration is None) == (self.pairs is None):
            raise ValueError("exactly one of duration and pairs must be set")
        if self.feedback not in FEEDBACK:
            raise ValueError(f"unknown feedback mode {self.feedback!r}")
        if self.mode not in ("rules", "tlp"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def mutator_feedback(self) -> bool:
        return FEEDBACK[self.feedback][0]

    @property
    def validator_feedback(self) -> bool:
        return FEEDBACK[self.feedback][1]


@dataclass
class RunStats:
    bases_generated: int = 0
    mutation_failures: int = 0
    not_partitionable: int = 0
    pairs_generated: int = 0
    pairs_skipped: int = 0
    skipped_same_plan: int = 0
    skipped_explain_failed: int = 0
    pairs_timed: int = 0
    pairs_flagged: int = 0
    execution_errors: int = 0
    inconclusive: int = 0
    soundness_violations: int = 0
    reports_emitted: int = 0
    unique_reports: int = 0
    prob_updates: int = 0
    rule_firings: dict = field(default_factory=dict)
    rule_bug_counts: dict = field(default_factory=dict)
    wall_time_s: float = 0.0
    finished: bool = False

    def conserved(self) -> bool:
        return (self.pairs_skipped + self.pairs_timed == self.pairs_generated
                and self.reports_emitted <= self.pairs_timed <= self.pairs_generated)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["rule_firings"] = {str(k): v for k, v in sorted(self.rule_firings.items())}
        d["rule_bug_counts"] = {str(k): v for k, v in sorted(self.rule_bug_counts.items())}
        return d


def _write_json(path: Path, data) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(data, indent=2))
    tmp.replace(path)


class FuzzRun:
    """State for one fuzzing campaign; ``run()`` drives generate -> mutate -> validate."""

    def __init__(self, config: RunConfig, adapter=None):
        self.config = config
        self.adapter = adapter
        self.stats = RunStats()
        self.out = Path(config.out)
        self.catalog = select_rules(config.rules)
        self.prob = tlp_probability_table() if config.mode == "tlp" else init_probability_table()
        self.freq = RuleActivationFrequencyTable.for_rules(r.id for r in self.catalog)
        self.seen_hashes: dict = {}
        self.validator = ValidatorConfig(config.threshold, config.timeout_ms, config.validation_attempts)

    # -- setup --

    def _connect(self):
        cfg = self.config
        if self.adapter is None:
            self.adapter = make_adapter(cfg.dbms, cfg.dsn)
        in_memory = cfg.dbms == "embedded" and cfg.dsn in (None, ":memory:")
        if cfg.generate_fixture or (in_memory and not self.adapter.catalog()):
            generate_fixture(self.adapter, FixtureSpec(cfg.scale, cfg.fixture_seed))
        self.schema = retrieve_metadata(self.adapter)
        if not self.schema.tables:
            raise AdapterError("target database has no tables; use --generate-fixture")
        self.samples = sample_values(self.adapter, self.schema, seed=cfg.seed)

    def _budget_left(self, started: float) -> bool:
        cfg = self.config
        if cfg.pairs is not None:
            return self.stats.pairs_generated < cfg.pairs
        return time.monotonic() - started < cfg.duration

    def _flush(self, started: float) -> None:
        self.stats.wall_time_s = time.monotonic() - started
        _write_json(self.out / "stats.json", self.stats.to_dict())

    def _dump_prob(self) -> None:
        if self.config.dump_prob_table:
            Path(self.config.dump_prob_table).write_text(self.prob.to_json())

    # -- loop --

    def _pairs_for(self, base, index: int) -> list:
        cfg = self.config
        rng = random.Random(f"{cfg.seed}:mutate:{index}")
        if cfg.mode == "tlp":
            try:
                return [QueryPair(*tlp_pair(base), (), cfg.seed)]
            except NotPartitionable:
                self.stats.not_partitionable += 1
                return []
        pairs = mutate_query(base, self.schema, cfg.attempts, rng, self.catalog, cfg.seed)
        if not pairs:
            self.stats.mutation_failures += 1
        elif cfg.mutator_feedback:
            fired = sorted({r for p in pairs for r in p.applied_rules})
            self.prob, self.freq = update_from_mutator(base, fired, self.prob, self.freq, DELTA)
            self.stats.prob_updates += 1
            self._dump_prob()
        return pairs

    def _handle(self, pair: QueryPair, val_rng: random.Random) -> None:
        st = self.stats
        st.pairs_generated += 1
        for r in pair.applied_rules:
            st.rule_firings[r] = st.rule_firings.get(r, 0) + 1
        v = validate_pair(pair.base, pair.mutant, self.adapter, self.validator, val_rng)
        if not v.timed:
            st.pairs_skipped += 1
            if v.status == "same_plan":
                st.skipped_same_plan += 1
            else:
                st.skipped_explain_failed += 1
            return
        st.pairs_timed += 1
        if v.status in ("below_threshold", "unsound", "error", "inconclusive"):
            st.execution_errors += v.status == "error"
            st.inconclusive += v.status == "inconclusive"
            st.soundness_violations += v.status == "unsound"
            if v.status == "unsound":
                self._record_violation(pair, v)
            return
        st.pairs_flagged += 1
        if v.status != "confirmed":
            return
        ctx = {
            "seed": self.config.seed,
            "dbms": self.adapter.capability.dbms,
            "version": self.adapter.capability.version,
            "fixture": {"scale": self.config.scale, "seed": self.config.fixture_seed},
            "threshold": self.config.threshold,
            "mode": self.config.mode,
        }
        st.reports_emitted += 1
        gen_bug_report(pair.base, pair.mutant, v.sqls, pair.applied_rules, v.samples, v.fingerprints,
                       v.explain, ctx, self.out / "reports", st.reports_emitted, self.seen_hashes)
        st.unique_reports = len(self.seen_hashes)
        for r in set(pair.applied_rules):
            st.rule_bug_counts[r] = st.rule_bug_counts.get(r, 0) + 1
        if self.config.validator_feedback:
            self.prob = update_from_validator(pair.base, self.prob, DELTA_VALIDATOR)
            st.prob_updates += 1
            self._dump_prob()

    def _record_violation(self, pair: QueryPair, v) -> None:
        path = self.out / "violations.jsonl"
        with path.open("a") as fh:
            fh.write(json.dumps({"applied_rules": list(pair.applied_rules), **v.sqls}) + "\n")

    def run(self) -> RunStats:
        cfg = self.config
        self.out.mkdir(parents=True, exist_ok=True)
        started = time.monotonic()
        self._connect()
        gen_rng = random.Random(f"{cfg.seed}:generate")
        val_rng = random.Random(f"{cfg.seed}:validate")
        bases = (self.out / "bases.jsonl").open("w")
        try:
            self._flush(started)
            while self._budget_left(started):
                base = build_specification(self.schema, self.samples, self.prob, gen_rng)
                index = self.stats.bases_generated
                self.stats.bases_generated += 1
                pairs = self._pairs_for(base, index)
                bases.write(json.dumps({
                    "index": index,
                    "sql": render_sql(base, self.adapter.dialect),
                    "plan": to_json(base),
                    "mutants": [{"rules": list(p.applied_rules), "sql": render_sql(p.mutant, self.adapter.dialect)}
                                for p in pairs],
                }) + "\n")
                bases.flush()
                for pair in pairs:
                    if not self._budget_left(started):
                        break
                    self._handle(pair, val_rng)
                    self._flush(started)
            self.stats.finished = True
        finally:
            bases.close()
            self._flush(started)
        return self.stats


def fuzz_loop(config: RunConfig, adapter=None) -> RunStats:
    return FuzzRun(config, adapter).run()


# --------------------------------------------------------------------------
# argument handling


def _rule_list(text: str) -> list:
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="perfmut", description="Metamorphic performance fuzzing for SQL engines.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def db_args(sp):
        sp.add_argument("--dbms", choices=["embedded", "postgres"])
        sp.add_argument("--dsn")
        sp.add_argument("--scale", type=float)
        sp.add_argument("--generate-fixture", action="store_true", default=None)

    f = sub.add_parser("fuzz", help="run a fuzzing campaign")
    db_args(f)
    f.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    f.add_argument("--seed", type=int)
    f.add_argument("--threshold", type=float)
    f.add_argument("--timeout-ms", type=float)
    f.add_argument("--validation-attempts", type=int)
    f.add_argument("--attempts", type=int)
    f.add_argument("--mode", choices=["rules", "tlp"])
    f.add_argument("--feedback", choices=sorted(FEEDBACK))
    f.add_argument("--rules", type=_rule_list, help="comma-separated rule ids")
    f.add_argument("--out")
    f.add_argument("--dump-prob-table")
    budget = f.add_mutually_exclusive_group()
    budget.add_argument("--duration", type=float, help="seconds")
    budget.add_argument("--pairs", type=int)

    fx = sub.add_parser("fixture", help="create the benchmark fixture")
    db_args(fx)
    fx.add_argument("--seed", type=int, default=0)
    fx.add_argument("--dump-fixture", help="also write one CSV per table into this directory")

    r = sub.add_parser("replay", help="re-time the pair stored in a report")
    r.add_argument("report")
    db_args(r)
    r.add_argument("--validation-attempts", type=int, default=DEFAULT_VALIDATION_ATTEMPTS)
    r.add_argument("--timeout-ms", type=float, default=DEFAULT_TIMEOUT_MS)

    ar = sub.add_parser("analyze-rules", help="rule frequency and impact over a report directory")
    ar.add_argument("dir")
    ac = sub.add_parser("analyze-cooccurrence", help="clause co-occurrence over a bases.jsonl corpus")
    ac.add_argument("path", help="bases.jsonl file or a run directory containing one")
    return p


def config_from_args(args) -> RunConfig:
    values: dict = {}
    if args.config:
        values.update(json.loads(Path(args.config).read_text()))
    names = {f.name for f in dataclasses.fields(RunConfig)}
    for name in names:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    if args.duration is not None:
        values.pop("pairs", None)
    if args.pairs is not None:
        values.pop("duration", None)
    unknown = set(values) - names
    if unknown:
        raise ValueError(f"unknown config keys {sorted(unknown)}")
    return RunConfig(**values)


def _cmd_fuzz(args) -> int:
    config = config_from_args(args)
    stats = fuzz_loop(config)
    print(json.dumps(stats.to_dict(), indent=2))
    return EXIT_UNSOUND if stats.soundness_violations else EXIT_OK


def _cmd_fixture(args) -> int:
    spec = FixtureSpec(args.scale if args.scale is not None else 0.01, args.seed)
    if args.dump_fixture:
        data = build_fixture_rows(spec)
        dump_fixture_csv(data, args.dump_fixture)
    with make_adapter(args.dbms or "embedded", args.dsn) as adapter:
        data = generate_fixture(adapter, spec)
    print(json.dumps(data.row_counts()))
    return EXIT_OK


def _cmd_replay(args) -> int:
    report = json.loads(Path(args.report).read_text())
    fixture = report.get("fixture", {})
    with make_adapter(args.dbms or "embedded", args.dsn) as adapter:
        in_memory = (args.dbms or "embedded") == "embedded" and args.dsn in (None, ":memory:")
        if args.generate_fixture or in_memory:
            generate_fixture(adapter, FixtureSpec(fixture.get("scale", 0.01), fixture.get("seed", 0)))
        sqls = {"base": report["base_sql"], "mutant": report["mutant_sql"]}
        out = run_pair(sqls, adapter, args.timeout_ms)
        ratio, slower = pair_ratio(out.samples)
        ok, _, ratios = confirm(sqls, adapter, args.validation_attempts, report["threshold"],
                                random.Random(report.get("seed", 0)), args.timeout_ms, expected_slower=slower)
    print(json.dumps({"initial_ratio": ratio, "slower": slower, "confirmation_ratios": ratios, "reproduced": ok}))
    return EXIT_OK


def _cmd_analyze_rules(args) -> int:
    table = analyze_rules(args.dir)
    print(json.dumps({str(k): dataclasses.asdict(v) for k, v in table.items()}, indent=2))
    return EXIT_OK


def _cmd_analyze_cooccurrence(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        path = path / "bases.jsonl"
    corpus = [from_json(json.loads(line)["plan"]) for line in path.read_text().splitlines() if line.strip()]
    clauses, matrix = analyze_cooccurrence(corpus)
    print(json.dumps({"queries": len(corpus), "clauses": clauses, "matrix": matrix}, indent=2))
    return EXIT_OK


COMMANDS = {
    "fuzz": _cmd_fuzz,
    "fixture": _cmd_fixture,
    "replay": _cmd_replay,
    "analyze-rules": _cmd_analyze_rules,
    "analyze-cooccurrence": _cmd_analyze_cooccurrence,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (DBConnectionError, AdapterError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
