"""Plan-diff gate, cross-referencing timing oracle, confirmation and bug reports."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import os
import random
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import jsonschema

from .adapters import ExecutionError, ExplainFailed, QueryTimeout, ResultTooLarge
from .catalog import canonical_value
from .ir import Column, Limit, PlanNode, Sort, output_columns, pretty, shape
from .render import render_sql

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 2.0
DEFAULT_TIMEOUT_MS = 15_000.0
DEFAULT_VALIDATION_ATTEMPTS = 3
DEFAULT_MAX_ROWS = 200_000
REL_TOL = 1e-9
ABS_TOL = 1e-12


@dataclass(frozen=True)
class TimingSample:
    query: str  # "base" | "mutant"
    duration_ms: float
    run_index: int
    position: int  # 0 = executed first within the run
    timed_out: bool = False


@dataclass
class BugReport:
    base_sql: str
    mutant_sql: str
    base_plan: str
    mutant_plan: str
    applied_rules: list
    fingerprints: dict
    explain: dict
    samples: list
    ratio: float
    run_ratios: list
    slower: str
    seed: int
    dbms: str
    version: str
    fixture: dict
    threshold: float
    content_hash: str
    duplicate_of: Optional[str] = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


REPORT_SCHEMA = {
    "type": "object",
    "required": ["base_sql", "mutant_sql", "applied_rules", "fingerprints", "explain", "samples",
                 "ratio", "run_ratios", "slower", "seed", "dbms", "version", "fixture", "threshold",
                 "content_hash", "duplicate_of"],
    "properties": {
        "base_sql": {"type": "string", "minLength": 1},
        "mutant_sql": {"type": "string", "minLength": 1},
        "base_plan": {"type": "string"},
        "mutant_plan": {"type": "string"},
        "applied_rules": {"type": "array", "items": {"type": "integer"}},
        "fingerprints": {"type": "object"},
        "explain": {"type": "object"},
        "samples": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["query", "duration_ms", "run_index", "position", "timed_out"],
                "properties": {
                    "query": {"enum": ["base", "mutant"]},
                    "duration_ms": {"type": "number", "minimum": 0},
                    "run_index": {"type": "integer", "minimum": 0},
                    "position": {"type": "integer", "minimum": 0},
                    "timed_out": {"type": "boolean"},
                },
            },
        },
        "ratio": {"type": "number", "minimum": 1},
        "run_ratios": {"type": "array", "items": {"type": "number"}},
        "slower": {"enum": ["base", "mutant"]},
        "seed": {"type": "integer"},
        "dbms": {"type": "string"},
        "version": {"type": "string"},
        "fixture": {"type": "object"},
        "threshold": {"type": "number", "exclusiveMinimum": 1},
        "content_hash": {"type": "string"},
        "duplicate_of": {"type": ["string", "null"]},
    },
}


def validate_report(data: dict) -> None:
    jsonschema.validate(data, REPORT_SCHEMA)
    if any(r < data["threshold"] for r in data["run_ratios"]):
        raise jsonschema.ValidationError("confirmation ratio below threshold")


# --------------------------------------------------------------------------
# plan-diff gate


def check_plan_diff(queries, adapter) -> bool:
    """True iff the queries do not all share one plan fingerprint."""
    prints = set()
    for sql in queries:
        fp, _ = adapter.explain(sql)
        prints.add(fp)
    return len(prints) > 1


# --------------------------------------------------------------------------
# timing


@dataclass
class RunOutcome:
    samples: list
    rows: dict  # query -> rows from the warm-up run, or None when unavailable


def _timed(adapter, sql, timeout_ms, max_rows):
    try:
        res = adapter.execute(sql, timeout_ms=timeout_ms, max_rows=max_rows)
        return res.duration_ms, False, res.rows
    except QueryTimeout:
        return float(timeout_ms), True, None


def run_pair(sqls: dict, adapter, timeout_ms: float = DEFAULT_TIMEOUT_MS, order=None, run_index: int = 0,
             warm_up: bool = True, max_rows: int = DEFAULT_MAX_ROWS) -> RunOutcome:
    """Time each query once, serially, after a discarded warm-up execution.

    ``sqls`` maps query ids ("base", "mutant") to SQL text.  A warm-up that
    times out stands in for the timed run.  Execution errors propagate.
    """
    order = list(order or sqls)
    rows = {}
    samples = []
    for pos, q in enumerate(order):
        if warm_up:
            _, timed_out, warm_rows = _timed(adapter, sqls[q], timeout_ms, max_rows)
            rows[q] = warm_rows
            if timed_out:
                samples.append(TimingSample(q, float(timeout_ms), run_index, pos, True))
                continue
        ms, timed_out, res_rows = _timed(adapter, sqls[q], timeout_ms, max_rows)
        if not warm_up:
            rows[q] = res_rows
        samples.append(TimingSample(q, ms, run_index, pos, timed_out))
    return RunOutcome(samples, rows)


def pair_ratio(samples) -> tuple:
    """``(ratio, slower_query)`` for one run's base/mutant samples."""
    d = {s.query: s.duration_ms for s in samples}
    b, m = d["base"], d["mutant"]
    hi, lo = max(b, m), min(b, m)
    slower = "base" if b >= m else "mutant"
    if lo <= 0:
        return (math.inf if hi > 0 else 1.0), slower
    return hi / lo, slower


def confirm(sqls: dict, adapter, validation_attempts: int = DEFAULT_VALIDATION_ATTEMPTS,
            threshold: float = DEFAULT_THRESHOLD, rng: Optional[random.Random] = None,
            timeout_ms: float = DEFAULT_TIMEOUT_MS, expected_slower: Optional[str] = None,
            first_run_index: int = 1):
    """Rerun the pair with randomized order; every rerun must exceed ``threshold``.

    When ``expected_slower`` is given, a rerun in which the other query is
    slower also fails confirmation.  Returns ``(confirmed, samples, ratios)``.
    """
    rng = rng or random.Random()
    samples, ratios = [], []
    for i in range(validation_attempts):
        order = list(sqls)
        rng.shuffle(order)
        out = run_pair(sqls, adapter, timeout_ms, order, first_run_index + i)
        samples.extend(out.samples)
        ratio, slower = pair_ratio(out.samples)
        ratios.append(ratio)
        if ratio <= threshold or (expected_slower and slower != expected_slower):
            return False, samples, ratios
    return True, samples, ratios


# --------------------------------------------------------------------------
# result oracle


def _canon(v):
    v = canonical_value(v)
    if isinstance(v, bool):
        return int(v)
    return v


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _values_equal(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    if _is_num(a) and _is_num(b):
        if isinstance(a, int) and isinstance(b, int):
            return a == b
        return math.isclose(a, b, rel_tol=REL_TOL, abs_tol=ABS_TOL)
    return a == b


def _rows_equal(r, s) -> bool:
    return len(r) == len(s) and all(_values_equal(a, b) for a, b in zip(r, s))


def _sort_key(row):
    out = []
    for v in row:
        if v is None:
            out.append((0, 0))
        elif _is_num(v):
            out.append((1, float(f"{float(v):.6g}")))
        else:
            out.append((2, str(v)))
    return tuple(out)


def _canon_rows(rows):
    return [tuple(_canon(v) for v in r) for r in rows]


def multiset_equal(a, b) -> bool:
    a, b = _canon_rows(a), _canon_rows(b)
    if len(a) != len(b):
        return False
    if Counter(a) == Counter(b):
        return True
    a, b = sorted(a, key=_sort_key), sorted(b, key=_sort_key)
    if all(_rows_equal(r, s) for r, s in zip(a, b)):
        return True
    return _greedy_match(a, b) == len(a)


def _greedy_match(a, b) -> int:
    unmatched = list(b)
    hits = 0
    for r in a:
        for i, s in enumerate(unmatched):
            if _rows_equal(r, s):
                del unmatched[i]
                hits += 1
                break
        else:
            return hits
    return hits


def sub_multiset(part, whole) -> bool:
    """Every row of ``part`` (with multiplicity) occurs in ``whole``."""
    part, whole = _canon_rows(part), _canon_rows(whole)
    if not +(Counter(part) - Counter(whole)):
        return True
    return _greedy_match(sorted(part, key=_sort_key), sorted(whole, key=_sort_key)) == len(part)


def rows_equivalent(a_rows, b_rows, sort_positions=None) -> bool:
    """Multiset equality; with ``sort_positions`` the sort-key sequence must also match."""
    if a_rows is None or b_rows is None:
        return False
    if not multiset_equal(a_rows, b_rows):
        return False
    if sort_positions:
        ka = [tuple(_canon(r[i]) for i in sort_positions) for r in a_rows]
        kb = [tuple(_canon(r[i]) for i in sort_positions) for r in b_rows]
        return all(_rows_equal(x, y) for x, y in zip(ka, kb))
    return True


def outer_sort_positions(plan: PlanNode):
    """Output positions of an outermost Sort's keys, or None when unordered."""
    if not isinstance(plan, Sort):
        return None
    out = output_columns(plan)
    positions = []
    for k in plan.keys:
        if not isinstance(k.expr, Column):
            return None
        keys = [c.key for c in out]
        if k.expr.key not in keys:
            return None
        positions.append(keys.index(k.expr.key))
    return positions


def oracle_compare_results(a: str, b: str, adapter, sort_positions=None,
                           timeout_ms: Optional[float] = None, max_rows: Optional[int] = DEFAULT_MAX_ROWS) -> bool:
    """True iff the two queries return equal result multisets.

    Pass ``sort_positions`` (see ``outer_sort_positions``) when both queries
    are topped by a Sort to make the comparison order-sensitive.
    """
    ra = adapter.execute(a, timeout_ms=timeout_ms, max_rows=max_rows).rows
    rb = adapter.execute(b, timeout_ms=timeout_ms, max_rows=max_rows).rows
    if ra and rb and len(ra[0]) != len(rb[0]):
        return False
    return rows_equivalent(ra, rb, sort_positions)


def strip_top_limit(plan: PlanNode) -> Optional[PlanNode]:
    """The plan without its outermost LIMIT (and a Sort directly below it)."""
    if not isinstance(plan, Limit):
        return None
    child = plan.child
    return child.child if isinstance(child, Sort) else child


def plans_equivalent(base: PlanNode, mutant: PlanNode, adapter, base_rows=None, mutant_rows=None,
                     timeout_ms: Optional[float] = None, max_rows: Optional[int] = DEFAULT_MAX_ROWS) -> bool:
    """Execution oracle for a (base, mutant) pair, aware of unordered LIMIT.

    A top-level LIMIT without a total order admits any qualifying subset, so
    in that case both results must have equal cardinality and each must be
    contained in the base's unlimited result.
    """
    dialect = adapter.dialect
    if base_rows is None:
        base_rows = adapter.execute(render_sql(base, dialect), timeout_ms=timeout_ms, max_rows=max_rows).rows
    if mutant_rows is None:
        mutant_rows = adapter.execute(render_sql(mutant, dialect), timeout_ms=timeout_ms, max_rows=max_rows).rows
    bs, ms = outer_sort_positions(base), outer_sort_positions(mutant)
    positions = bs if bs is not None and ms is not None and bs == ms else None
    if rows_equivalent(base_rows, mutant_rows, positions):
        return True
    full = strip_top_limit(base)
    if full is None or len(base_rows) != len(mutant_rows):
        return False
    whole = adapter.execute(render_sql(full, dialect), timeout_ms=timeout_ms, max_rows=max_rows).rows
    return sub_multiset(base_rows, whole) and sub_multiset(mutant_rows, whole)


# --------------------------------------------------------------------------
# reports


def content_hash(applied_rules, base: PlanNode, mutant: PlanNode) -> str:
    key = json.dumps([sorted(applied_rules), shape(base), shape(mutant)])
    return hashlib.sha256(key.encode()).hexdigest()[:16]


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def median_ms(samples, query: str) -> float:
    vals = sorted(s.duration_ms for s in samples if s.query == query)
    n = len(vals)
    if n == 0:
        return 0.0
    return vals[n // 2] if n % 2 else (vals[n // 2 - 1] + vals[n // 2]) / 2


def render_markdown(report: BugReport) -> str:
    """Human-readable rendering: faster query first, each tagged with its median time."""
    t = {q: median_ms([TimingSample(**s) if isinstance(s, dict) else s for s in report.samples], q)
         for q in ("base", "mutant")}
    faster = "mutant" if report.slower == "base" else "base"
    sql = {"base": report.base_sql, "mutant": report.mutant_sql}
    lines = [f"# Performance report ({report.dbms} {report.version})", ""]
    lines.append(f"Slowdown {report.ratio:.1f}x; rules {report.applied_rules}; seed {report.seed}.")
    if report.duplicate_of:
        lines.append(f"Duplicate of {report.duplicate_of}.")
    lines += ["", "```sql"]
    lines.append(f"/* [First query, {t[faster]:.0f} milliseconds] */")
    lines.append(sql[faster] + ";")
    lines.append("")
    lines.append(f"/* [Second query, {t[report.slower]:.0f} milliseconds] */")
    lines.append(sql[report.slower] + ";")
    lines += ["```", ""]
    for q in (faster, report.slower):
        lines += [f"## Plan ({q})", "", "```", report.explain.get(q, ""), "```", ""]
    return "\n".join(lines)


def gen_bug_report(base: PlanNode, mutant: PlanNode, sqls: dict, applied_rules, samples, fingerprints: dict,
                   explain_texts: dict, context: dict, out_dir, counter: int, seen: Optional[dict] = None) -> Path:
    """Persist one JSON report (plus Markdown) atomically; returns the JSON path.

    ``seen`` maps content hashes to earlier report names and is updated in
    place so repeated pairs point at their first occurrence.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs = sorted({s.run_index for s in samples})
    run_ratios = []
    slower = None
    for r in runs:
        ratio, s = pair_ratio([x for x in samples if x.run_index == r])
        run_ratios.append(ratio)
        slower = slower or s
    mb, mm = median_ms(samples, "base"), median_ms(samples, "mutant")
    hi, lo = max(mb, mm), min(mb, mm)
    ratio = hi / lo if lo > 0 else (math.inf if hi > 0 else 1.0)
    h = content_hash(applied_rules, base, mutant)
    name = f"report-{context.get('seed', 0)}-{counter}.json"
    duplicate_of = None
    if seen is not None:
        duplicate_of = seen.get(h)
        seen.setdefault(h, name)
    report = BugReport(
        base_sql=sqls["base"],
        mutant_sql=sqls["mutant"],
        base_plan=pretty(base),
        mutant_plan=pretty(mutant),
        applied_rules=list(applied_rules),
        fingerprints={k: dataclasses.asdict(v) for k, v in fingerprints.items()},
        explain=dict(explain_texts),
        samples=[dataclasses.asdict(s) for s in samples],
        ratio=min(ratio, 1e12),
        run_ratios=[min(r, 1e12) for r in run_ratios],
        slower="mutant" if mm > mb else "base",
        seed=int(context.get("seed", 0)),
        dbms=str(context.get("dbms", "")),
        version=str(context.get("version", "")),
        fixture=dict(context.get("fixture", {})),
        threshold=float(context.get("threshold", DEFAULT_THRESHOLD)),
        content_hash=h,
        duplicate_of=duplicate_of,
    )
    path = out_dir / name
    _atomic_write(path, json.dumps(report.to_dict(), indent=2))
    _atomic_write(path.with_suffix(".md"), render_markdown(report))
    return path


# --------------------------------------------------------------------------
# one-pair pipeline


@dataclass
class ValidatorConfig:
    threshold: float = DEFAULT_THRESHOLD
    timeout_ms: float = DEFAULT_TIMEOUT_MS
    validation_attempts: int = DEFAULT_VALIDATION_ATTEMPTS
    max_rows: int = DEFAULT_MAX_ROWS

    def __post_init__(self):
        if not self.threshold > 1:
            raise ValueError("threshold must exceed 1")
        if not self.timeout_ms > 0:
            raise ValueError("timeout must be positive")
        if self.validation_attempts < 1:
            raise ValueError("validation_attempts must be >= 1")


@dataclass
class PairVerdict:
    status: str  # same_plan | explain_failed | error | inconclusive | unsound | below_threshold | unconfirmed | confirmed
    sqls: dict
    samples: list = field(default_factory=list)
    ratio: float = 1.0
    slower: Optional[str] = None
    fingerprints: dict = field(default_factory=dict)
    explain: dict = field(default_factory=dict)
    detail: str = ""

    @property
    def timed(self) -> bool:
        return self.status not in ("same_plan", "explain_failed")


def validate_pair(base: PlanNode, mutant: PlanNode, adapter, config: ValidatorConfig, rng: random.Random,
                  check_equivalence: bool = True, expect_slower: Optional[str] = None) -> PairVerdict:
    """Gate, time, check equivalence and confirm one (base, mutant) pair."""
    dialect = adapter.dialect
    sqls = {"base": render_sql(base, dialect), "mutant": render_sql(mutant, dialect)}
    verdict = PairVerdict("same_plan", sqls)
    try:
        for q in ("base", "mutant"):
            fp, raw = adapter.explain(sqls[q])
            verdict.fingerprints[q] = fp
            verdict.explain[q] = raw
    except ExplainFailed as exc:
        log.info("explain rejected pair: %s", exc)
        verdict.status, verdict.detail = "explain_failed", str(exc)
        return verdict
    if len(set(verdict.fingerprints.values())) <= 1:
        return verdict

    try:
        out = run_pair(sqls, adapter, config.timeout_ms, max_rows=config.max_rows)
    except ResultTooLarge as exc:
        verdict.status, verdict.detail = "inconclusive", str(exc)
        return verdict
    except ExecutionError as exc:
        verdict.status, verdict.detail = "error", str(exc)
        log.error("execution failed for pair: %s\n%s\n%s", exc, sqls["base"], sqls["mutant"])
        return verdict
    verdict.samples = list(out.samples)
    verdict.ratio, verdict.slower = pair_ratio(out.samples)

    if check_equivalence:
        if out.rows.get("base") is None or out.rows.get("mutant") is None:
            verdict.detail = "equivalence unchecked (timeout)"
        else:
            try:
                same = plans_equivalent(base, mutant, adapter, out.rows["base"], out.rows["mutant"],
                                        timeout_ms=config.timeout_ms, max_rows=config.max_rows)
            except (QueryTimeout, ResultTooLarge):
                same = True
                verdict.detail = "equivalence unchecked (limit expansion too costly)"
            if not same:
                verdict.status = "unsound"
                log.critical("non-equivalent mutant:\n%s\n%s", sqls["base"], sqls["mutant"])
                return verdict

    if verdict.ratio <= config.threshold:
        verdict.status = "below_threshold"
        return verdict
    if all(s.timed_out for s in out.samples):
        verdict.status = "inconclusive"
        return verdict
    ok, more, _ = confirm(sqls, adapter, config.validation_attempts, config.threshold, rng,
                          config.timeout_ms, expected_slower=expect_slower or verdict.slower)
    verdict.samples.extend(more)
    verdict.status = "confirmed" if ok else "unconfirmed"
    return verdict
