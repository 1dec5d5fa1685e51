"""TLP comparison experiment: which side of a partitioned pair runs slower."""
from __future__ import annotations

import logging
import random
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

from .adapters import EmbeddedAdapter
from .catalog import FixtureSpec, generate_fixture, retrieve_metadata, sample_values
from .generator import ProbabilityTable, build_specification, init_probability_table
from .mutator import NotPartitionable, tlp_pair
from .validator import DEFAULT_THRESHOLD, ValidatorConfig, validate_pair

log = logging.getLogger(__name__)

# optional clauses that block partitioning (or make it trivial) are made rare
_PARTITIONABLE = {"where": "present", "limit": "absent", "order_by": "absent", "union": "absent"}


def tlp_probability_table(prob: Optional[ProbabilityTable] = None) -> ProbabilityTable:
    """Bias generation toward bases with a top-level WHERE and nothing above it."""
    prob = prob or init_probability_table()
    for point, alt in _PARTITIONABLE.items():
        alts = prob.points[point]
        rest = prob.p_min * (len(alts) - 1)
        prob = prob.with_point(point, {a: (1 - rest if a == alt else prob.p_min) for a in alts})
    return prob


@dataclass(frozen=True)
class TLPConfig:
    target: int = 200  # confirmed pairs to collect
    scale: float = 0.01
    seed: int = 0
    fixture_seed: int = 0
    threshold: float = DEFAULT_THRESHOLD
    timeout_ms: float = 300.0
    validation_attempts: int = 3
    max_seconds: Optional[float] = None

    def __post_init__(self):
        if self.target < 1:
            raise ValueError("target must be >= 1")


@dataclass
class TLPResult:
    statuses: Counter = field(default_factory=Counter)
    confirmed: list = field(default_factory=list)  # (slower, ratio) per confirmed pair
    unconfirmed: list = field(default_factory=list)
    base_slower: list = field(default_factory=list)  # confirmed verdicts where the base lost
    seconds: float = 0.0

    @property
    def mutant_slower_share(self) -> float:
        if not self.confirmed:
            return 0.0
        return sum(1 for s, _ in self.confirmed if s == "mutant") / len(self.confirmed)

    def mean_ratio(self) -> float:
        return sum(r for _, r in self.confirmed) / len(self.confirmed) if self.confirmed else 0.0


def run_tlp_comparison(config: TLPConfig, adapter=None) -> TLPResult:
    """Collect ``config.target`` confirmed TLP pairs and record their slower side."""
    own = adapter is None
    if own:
        adapter = EmbeddedAdapter()
        generate_fixture(adapter, FixtureSpec(config.scale, config.fixture_seed))
    try:
        schema = retrieve_metadata(adapter)
        samples = sample_values(adapter, schema, seed=config.seed)
        prob = tlp_probability_table()
        gen_rng = random.Random(f"{config.seed}:generate")
        val_rng = random.Random(f"{config.seed}:validate")
        vcfg = ValidatorConfig(config.threshold, config.timeout_ms, config.validation_attempts)
        result = TLPResult()
        started = time.monotonic()
        while len(result.confirmed) < config.target:
            if config.max_seconds is not None and time.monotonic() - started > config.max_seconds:
                log.warning("TLP run stopped after %.0f s with %d confirmed pairs",
                            config.max_seconds, len(result.confirmed))
                break
            base = build_specification(schema, samples, prob, gen_rng)
            try:
                unfiltered, mutant = tlp_pair(base)
            except NotPartitionable:
                result.statuses["not_partitionable"] += 1
                continue
            v = validate_pair(unfiltered, mutant, adapter, vcfg, val_rng)
            result.statuses[v.status] += 1
            if v.status == "confirmed":
                result.confirmed.append((v.slower, v.ratio))
                if v.slower == "base":
                    result.base_slower.append(v)
            elif v.status == "unconfirmed":
                result.unconfirmed.append((v.slower, v.ratio))
        result.seconds = time.monotonic() - started
        return result
    finally:
        if own:
            adapter.close()
