"""Execution-oracle check that mutants return the same results as their base."""
from __future__ import annotations

import random
import time
from collections import Counter
from dataclasses import dataclass, field

from .adapters import EmbeddedAdapter, ExecutionError, QueryTimeout, ResultTooLarge
from .catalog import FixtureSpec, generate_fixture, retrieve_metadata, sample_values
from .generator import build_specification, init_probability_table
from .mutator import mutate_query
from .render import render_sql
from .validator import plans_equivalent


@dataclass
class SoundnessConfig:
    pairs: int = 1000
    scale: float = 0.01
    seed: int = 0
    fixture_seed: int = 0
    timeout_ms: float = 500.0
    max_rows: int = 20_000
    attempts: int = 20


@dataclass
class SoundnessResult:
    compared: int = 0
    mismatches: list = field(default_factory=list)  # (rules, base_sql, mutant_sql)
    bases: int = 0
    skipped_bases: int = 0
    skipped_pairs: int = 0
    rule_counts: Counter = field(default_factory=Counter)
    seconds: float = 0.0


def run_soundness(config: SoundnessConfig, adapter=None) -> SoundnessResult:
    """Compare mutants against their base until ``config.pairs`` pairs were compared.

    Bases whose own execution times out or overflows the row cap are skipped
    along with their mutants; such pairs cannot be compared.
    """
    start = time.perf_counter()
    if adapter is None:
        adapter = EmbeddedAdapter()
        generate_fixture(adapter, FixtureSpec(config.scale, config.fixture_seed))
    schema = retrieve_metadata(adapter)
    samples = sample_values(adapter, schema, seed=config.seed)
    prob = init_probability_table()
    rng = random.Random(config.seed)
    out = SoundnessResult()
    limits = dict(timeout_ms=config.timeout_ms, max_rows=config.max_rows)
    while out.compared < config.pairs:
        base = build_specification(schema, samples, prob, rng)
        out.bases += 1
        pairs = mutate_query(base, schema, config.attempts, rng)
        if not pairs:
            continue
        try:
            base_rows = adapter.execute(render_sql(base, adapter.dialect), **limits).rows
        except (QueryTimeout, ResultTooLarge, ExecutionError):
            out.skipped_bases += 1
            continue
        for pair in pairs:
            if out.compared >= config.pairs:
                break
            try:
                same = plans_equivalent(base, pair.mutant, adapter, base_rows=base_rows, **limits)
            except (QueryTimeout, ResultTooLarge):
                out.skipped_pairs += 1
                continue
            except ExecutionError as exc:
                # the base ran, so a failing mutant is itself a soundness bug
                out.compared += 1
                out.mismatches.append(
                    (pair.applied_rules, render_sql(base, adapter.dialect), f"{render_sql(pair.mutant, adapter.dialect)} -- {exc}"))
                continue
            out.compared += 1
            out.rule_counts.update(pair.applied_rules)
            if not same:
                out.mismatches.append(
                    (pair.applied_rules, render_sql(base, adapter.dialect), render_sql(pair.mutant, adapter.dialect)))
    out.seconds = time.perf_counter() - start
    return out
