"""Post-hoc analyses over report directories and base-query corpora."""
from __future__ import annotations

import itertools
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .ir import Aggregate, Filter, PlanNode, walk
from .generator import extract_entities

log = logging.getLogger(__name__)


class MalformedReport(ValueError):
    pass


@dataclass
class RuleImpact:
    frequency: float
    ratios: list = field(default_factory=list)  # base time / mutant time; > 1 means the mutant is faster


def _median(values) -> float:
    v = sorted(values)
    n = len(v)
    if not n:
        return 0.0
    return v[n // 2] if n % 2 else (v[n // 2 - 1] + v[n // 2]) / 2


def load_reports(report_dir) -> list:
    out = []
    for path in sorted(Path(report_dir).glob("report-*.json")):
        try:
            data = json.loads(path.read_text())
            if not isinstance(data.get("applied_rules"), list) or not isinstance(data.get("samples"), list):
                raise MalformedReport("missing applied_rules or samples")
            out.append(data)
        except (OSError, ValueError) as exc:
            log.warning("skipping %s: %s", path.name, exc)
    return out


def analyze_rules(report_dir) -> dict:
    """Per rule: share of reports it appears in, and its base/mutant timing ratios."""
    reports = load_reports(report_dir)
    if not reports:
        return {}
    counts: Counter = Counter()
    ratios: dict = {}
    for r in reports:
        base = _median(s["duration_ms"] for s in r["samples"] if s["query"] == "base")
        mutant = _median(s["duration_ms"] for s in r["samples"] if s["query"] == "mutant")
        ratio = base / mutant if mutant > 0 else float("inf")
        for rule in set(r["applied_rules"]):
            counts[rule] += 1
            ratios.setdefault(rule, []).append(ratio)
    return {rule: RuleImpact(counts[rule] / len(reports), ratios[rule]) for rule in sorted(counts)}


JOIN_CLAUSES = {"INNER": "INNER JOIN", "LEFT": "LEFT JOIN", "CROSS": "CROSS JOIN"}


def clause_set(plan: PlanNode) -> frozenset:
    """SQL clauses present in ``plan``; every function name counts as FUNC."""
    out = set()
    for e in extract_entities(plan):
        if e in JOIN_CLAUSES:
            out.add("JOIN")
            out.add(JOIN_CLAUSES[e])
        elif e in ("WHERE", "GROUP BY", "ORDER BY", "LIMIT", "DISTINCT", "UNION", "UNION ALL", "LIKE", "FUNC"):
            out.add(e)
        elif e in ("COUNT", "SUM", "AVG", "MIN", "MAX"):
            out.add("FUNC")
    for node in walk(plan):
        if isinstance(node, Filter) and isinstance(node.child, Aggregate):
            out.add("HAVING")
    return frozenset(out)


def analyze_cooccurrence(corpus) -> tuple:
    """``(clauses, matrix)`` with matrix[a][b] = share of plans containing both a and b.

    The diagonal holds single-clause frequencies.
    """
    sets = [clause_set(p) for p in corpus]
    clauses = sorted(set().union(*sets)) if sets else []
    matrix = {a: {b: 0.0 for b in clauses} for a in clauses}
    if not sets:
        return clauses, matrix
    n = len(sets)
    for s in sets:
        for a in s:
            matrix[a][a] += 1 / n
        for a, b in itertools.combinations(sorted(s), 2):
            matrix[a][b] += 1 / n
            matrix[b][a] += 1 / n
    return clauses, matrix
