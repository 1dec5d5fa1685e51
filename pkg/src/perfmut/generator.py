"""Grammar-driven base-query generation steered by a feedback-updated probability table."""
from __future__ import annotations

import json
import logging
import random
import statistics
from dataclasses import dataclass, field

from .catalog import SchemaMetadata, ValueSample
from .ir import (
    DATETIME, DOUBLE, INTEGER, NUMERIC, STRING, TRUE,
    AggCall, Aggregate, Arith, BoolOp, Column, Compare, Distinct, Filter, Func, IsTest, Item,
    Join, Limit, Literal, Not, PlanNode, Project, Scan, Sort, SortKey, Union,
    cast, extract, item, lit, output_columns, type_check, walk, walk_expr, node_exprs,
)

log = logging.getLogger(__name__)

DELTA = 0.05
DELTA_VALIDATOR = 0.10
P_MIN = 0.02
MAX_JOINS = 3
MAX_PREDICATE_DEPTH = 2


class GenerationExhausted(Exception):
    pass


# Productions as generated.  Optional clauses are modelled as {present, absent} slots.
GRAMMAR = {
    "query": [["query_spec"], ["query_spec", "union", "query_spec"]],
    "query_spec": [["SELECT", "distinct", "select_list", "FROM", "table_ref", "where",
                    "group_by", "order_by", "limit"]],
    "select_list": [["select_expr"], ["select_expr", ",", "select_list"], ["*"]],
    "select_expr": [["column"], ["FUNC"], ["arith"]],
    "table_ref": [["table_simple"], ["table_joined"]],
    "table_joined": [["table_ref", "join_spec", "table_ref"]],
    "join_spec": [["join_type", "ON", "join_cond"]],
    "join_type": [["LEFT"], ["CROSS"], ["INNER"]],
    "join_cond": [["bool_expr"], ["TRUE"]],
    "where": [["WHERE", "bool_expr"], []],
    "group_by": [["GROUP BY", "column"], []],
    "order_by": [["ORDER BY", "column"], []],
    "limit": [["LIMIT", "integer"], []],
    "distinct": [["DISTINCT"], []],
    "union": [["UNION"], ["UNION ALL"]],
    "bool_expr": [["predicate"], ["bool_expr", "AND", "bool_expr"],
                  ["bool_expr", "OR", "bool_expr"], ["NOT", "bool_expr"]],
}

# choice point -> alternatives with default probabilities (None = uniform)
CHOICE_POINTS = {
    "table_ref": {"table_simple": 0.5, "LEFT": 0.16, "CROSS": 0.17, "INNER": 0.17},
    "join_cond": {"bool_expr": 0.5, "TRUE": 0.5},
    "where": {"present": None, "absent": None},
    "group_by": {"present": None, "absent": None},
    "order_by": {"present": None, "absent": None},
    "limit": {"present": None, "absent": None},
    "distinct": {"present": None, "absent": None},
    "union": {"absent": None, "UNION": None, "UNION ALL": None},
    "projection": {"list": None, "star": None},
    "select_expr": {"column": None, "FUNC": None, "arith": None},
    "bool_op": {"leaf": None, "AND": None, "OR": None, "NOT": None},
    "predicate": {
        "comparison": None, "column_comparison": None, "like": None, "null_test": None,
        "extract": None, "const_expr": None, "distinct_from": None, "is_true": None,
    },
    "comparison_op": {"=": None, "<": None, ">": None, "<=": None, ">=": None, "<>": None},
    "aggregate": {"COUNT": None, "SUM": None, "AVG": None, "MIN": None, "MAX": None},
}

# grammar symbol -> (choice point, alternative) it rewards
ENTITY_SLOTS = {
    "table_simple": ("table_ref", "table_simple"),
    "LEFT": ("table_ref", "LEFT"),
    "CROSS": ("table_ref", "CROSS"),
    "INNER": ("table_ref", "INNER"),
    "bool_expr": ("join_cond", "bool_expr"),
    "TRUE": ("join_cond", "TRUE"),
    "WHERE": ("where", "present"),
    "GROUP BY": ("group_by", "present"),
    "ORDER BY": ("order_by", "present"),
    "LIMIT": ("limit", "present"),
    "DISTINCT": ("distinct", "present"),
    "UNION": ("union", "UNION"),
    "UNION ALL": ("union", "UNION ALL"),
    "FUNC": ("select_expr", "FUNC"),
    "LIKE": ("predicate", "like"),
    "COUNT": ("aggregate", "COUNT"),
    "SUM": ("aggregate", "SUM"),
    "AVG": ("aggregate", "AVG"),
    "MIN": ("aggregate", "MIN"),
    "MAX": ("aggregate", "MAX"),
}


def grammar_problems(grammar: dict = GRAMMAR) -> list:
    terminals = set(ENTITY_SLOTS) | {
        "SELECT", "FROM", "ON", "AND", "OR", "NOT", ",", "*", "column", "arith", "integer", "predicate",
        "GROUP BY", "ORDER BY", "WHERE",
    }
    out = []
    for lhs, alts in grammar.items():
        for alt in alts:
            for sym in alt:
                if sym not in grammar and sym not in terminals:
                    out.append(f"{lhs}: undefined symbol {sym}")
    return out


# --------------------------------------------------------------------------
# probability table


@dataclass(frozen=True)
class ProbabilityTable:
    points: dict  # choice point -> {alternative: probability}
    p_min: float = P_MIN

    def choose(self, point: str, rng: random.Random, allowed=None) -> str:
        dist = self.points[point]
        alts = [a for a in dist if allowed is None or a in allowed]
        weights = [dist[a] for a in alts]
        return rng.choices(alts, weights)[0]

    def with_point(self, point: str, dist: dict) -> "ProbabilityTable":
        points = dict(self.points)
        points[point] = dict(dist)
        return ProbabilityTable(points, self.p_min)

    def problems(self, tol: float = 1e-9) -> list:
        out = []
        for name, dist in self.points.items():
            total = sum(dist.values())
            if abs(total - 1.0) > tol:
                out.append(f"{name}: sums to {total!r}")
            for alt, p in dist.items():
                if p < self.p_min - tol:
                    out.append(f"{name}.{alt}: {p!r} below floor")
        return out

    def to_json(self) -> str:
        return json.dumps(self.points, indent=2, sort_keys=True)


def init_probability_table(choice_points: dict = CHOICE_POINTS, p_min: float = P_MIN) -> ProbabilityTable:
    points = {}
    for name, alts in choice_points.items():
        if all(p is not None for p in alts.values()):
            points[name] = dict(alts)
        else:
            points[name] = {a: 1.0 / len(alts) for a in alts}
    return ProbabilityTable(points, p_min)


def _shift_mass(dist: dict, rewarded: set, delta: float, p_min: float) -> dict:
    """Raise rewarded alternatives by ``delta`` and shrink siblings proportionally.

    Siblings never drop below ``p_min``; when they are pinned the increase is
    cut back accordingly.
    """
    siblings = [a for a in dist if a not in rewarded]
    if not siblings or not rewarded:
        return dict(dist)
    k = len(dist)
    cap = 1.0 - p_min * (k - 1)
    want = {r: max(0.0, min(dist[r] + delta, cap) - dist[r]) for r in rewarded}
    inc = sum(want.values())
    mass = sum(dist[s] for s in siblings)
    room = max(0.0, mass - p_min * len(siblings))
    if inc > room:
        want = {r: w * room / inc for r, w in want.items()} if inc else want
        inc = room
    if inc <= 0:
        return dict(dist)
    new_mass = mass - inc

    pinned: set = set()
    while True:
        free = [s for s in siblings if s not in pinned]
        free_mass = new_mass - p_min * len(pinned)
        base = sum(dist[s] for s in free)
        scaled = {s: dist[s] * free_mass / base for s in free}
        low = {s for s, q in scaled.items() if q < p_min}
        if not low:
            break
        pinned |= low

    out = {}
    for a in dist:
        if a in rewarded:
            out[a] = dist[a] + want[a]
        elif a in pinned:
            out[a] = p_min
        else:
            out[a] = scaled[a]
    # absorb rounding into the largest entry
    top = max(out, key=out.get)
    out[top] += 1.0 - sum(out.values())
    return out


def reward(prob: ProbabilityTable, entities, delta: float) -> ProbabilityTable:
    per_point: dict = {}
    for e in entities:
        if e in ENTITY_SLOTS:
            point, alt = ENTITY_SLOTS[e]
            if point in prob.points and alt in prob.points[point]:
                per_point.setdefault(point, set()).add(alt)
    points = dict(prob.points)
    for point, rewarded in per_point.items():
        points[point] = _shift_mass(points[point], rewarded, delta, prob.p_min)
    return ProbabilityTable(points, prob.p_min)


@dataclass(frozen=True)
class RuleActivationFrequencyTable:
    counts: dict = field(default_factory=dict)

    @classmethod
    def for_rules(cls, rule_ids) -> "RuleActivationFrequencyTable":
        return cls({r: 0 for r in rule_ids})

    def recorded(self, rule_ids) -> "RuleActivationFrequencyTable":
        counts = dict(self.counts)
        for r in rule_ids:
            counts[r] = counts.get(r, 0) + 1
        return RuleActivationFrequencyTable(counts)

    def lowest_quartile(self, rule_id) -> bool:
        values = sorted(self.counts.values())
        if not values:
            return True
        if len(values) == 1:
            q1 = values[0]
        else:
            q1 = statistics.quantiles(values, n=4, method="inclusive")[0]
        return self.counts.get(rule_id, 0) <= q1


def update_from_mutator(plan: PlanNode, applied_rules, prob: ProbabilityTable,
                        freq: RuleActivationFrequencyTable, delta: float = DELTA):
    """Reward the base query's entities after a successful mutation.

    Rarely fired rules earn a doubled increment.  Returns ``(prob, freq)``.
    """
    applied = list(applied_rules)
    if not applied:
        return prob, freq
    rare = any(freq.lowest_quartile(r) for r in applied)
    new_prob = reward(prob, extract_entities(plan), 2 * delta if rare else delta)
    return new_prob, freq.recorded(applied)


def update_from_validator(plan: PlanNode, prob: ProbabilityTable,
                          delta: float = DELTA_VALIDATOR) -> ProbabilityTable:
    return reward(prob, extract_entities(plan), delta)


# --------------------------------------------------------------------------
# entities


def extract_entities(plan: PlanNode) -> frozenset:
    """Grammar symbols instantiated in ``plan``."""
    out = set()
    for node in walk(plan):
        if isinstance(node, Scan):
            out.add("table_simple")
        elif isinstance(node, Join):
            out.add(node.kind)
            if node.condition == TRUE:
                out.add("TRUE")
            elif node.condition is not None:
                out.add("bool_expr")
        elif isinstance(node, Filter):
            out.add("WHERE")
        elif isinstance(node, Aggregate):
            if node.keys:
                out.add("GROUP BY")
        elif isinstance(node, Distinct):
            out.add("DISTINCT")
        elif isinstance(node, Sort):
            out.add("ORDER BY")
        elif isinstance(node, Limit):
            out.add("LIMIT")
        elif isinstance(node, Union):
            out.add("UNION ALL" if node.all else "UNION")
        for e in node_exprs(node):
            for x in walk_expr(e):
                if isinstance(x, Func):
                    out.add("FUNC")
                elif isinstance(x, AggCall):
                    out.add(x.name)
                elif isinstance(x, Compare) and x.op in ("LIKE", "NOT LIKE"):
                    out.add("LIKE")
    return frozenset(out)


# --------------------------------------------------------------------------
# plan construction

_DEFAULT_LITERALS = {INTEGER: 1, DOUBLE: 1.5, STRING: "a", DATETIME: "2000-01-01 00:00:00"}
_LIMITS = (1, 2, 5, 10, 13, 20, 50, 100)


class _Builder:
    def __init__(self, schema: SchemaMetadata, samples: ValueSample, prob: ProbabilityTable,
                 rng: random.Random, max_joins: int):
        self.schema = schema
        self.samples = samples
        self.prob = prob
        self.rng = rng
        self.joins_left = max_joins
        self.alias_table: dict = {}

    def pick(self, point, allowed=None):
        return self.prob.choose(point, self.rng, allowed)

    # -- FROM --

    def scan(self) -> Scan:
        tables = [t for t in self.schema.tables if t.columns]
        t = self.rng.choice(tables)
        n = sum(1 for v in self.alias_table.values() if v == t.name)
        alias = t.name if n == 0 else f"{t.name}_{n}"
        self.alias_table[alias] = t.name
        return self.schema.scan(t.name, alias)

    def table_ref(self) -> PlanNode:
        choice = self.pick("table_ref") if self.joins_left > 0 else "table_simple"
        if choice == "table_simple":
            return self.scan()
        self.joins_left -= 1
        left = self.table_ref()
        right = self.table_ref()
        if choice == "CROSS":
            return Join("CROSS", left, right)
        cond = TRUE
        if self.pick("join_cond") == "bool_expr":
            cond = self.join_predicate(output_columns(left), output_columns(right)) or TRUE
        return Join(choice, left, right, cond)

    def join_predicate(self, left, right):
        pairs = [(a, b) for a in left for b in right if a.type == b.type]
        if not pairs:
            return None
        a, b = self.rng.choice(pairs)
        return Compare(self.pick("comparison_op"), a, b)

    # -- literals --

    def literal_for(self, col: Column) -> Literal:
        table = self.alias_table.get(col.table)
        s = self.samples.get(table, col.name) if table else None
        if s is None or not s.values:
            return Literal(_DEFAULT_LITERALS[col.type], col.type)
        r = self.rng.random()
        if r < 0.1 and s.min is not None:
            v = s.min
        elif r < 0.2 and s.max is not None:
            v = s.max
        else:
            v = self.rng.choice(s.values)
        if col.type == INTEGER:
            v = int(v)
        elif col.type == DOUBLE:
            v = float(v)
        else:
            v = str(v)
        return Literal(v, col.type)

    # -- predicates --

    def predicate(self, cols, depth: int = 0):
        op = self.pick("bool_op") if depth < MAX_PREDICATE_DEPTH else "leaf"
        if op in ("AND", "OR"):
            return BoolOp(op, (self.predicate(cols, depth + 1), self.predicate(cols, depth + 1)))
        if op == "NOT":
            return Not(self.predicate(cols, depth + 1))
        return self.leaf(cols)

    def leaf(self, cols):
        kind = self.pick("predicate")
        rng = self.rng
        by_type = {t: [c for c in cols if c.type == t] for t in (INTEGER, DOUBLE, STRING, DATETIME)}
        if kind == "column_comparison":
            groups = [g for g in by_type.values() if len(g) >= 2]
            if groups:
                a, b = rng.sample(rng.choice(groups), 2)
                return Compare(self.pick("comparison_op"), a, b)
        elif kind == "like" and by_type[STRING]:
            c = rng.choice(by_type[STRING])
            v = str(self.literal_for(c).value)
            pattern = v[: rng.randint(1, max(1, len(v)))] + "%" if rng.random() < 0.7 else "%" + v[-2:]
            return Compare(rng.choice(["LIKE", "NOT LIKE"]), c, Literal(pattern, STRING))
        elif kind == "null_test":
            return IsTest(rng.choice(["NULL", "NOT NULL"]), rng.choice(cols))
        elif kind == "extract" and by_type[DATETIME]:
            c = rng.choice(by_type[DATETIME])
            year = int(str(self.literal_for(c).value)[:4])
            return Compare(self.pick("comparison_op"), extract("YEAR", c), lit(year))
        elif kind == "const_expr" and by_type[INTEGER]:
            c = rng.choice(by_type[INTEGER])
            target = int(self.literal_for(c).value)
            k = rng.randint(1, 4)
            if rng.random() < 0.5:
                const = cast(Arith("/", lit(target * k), lit(k)), INTEGER)
            else:
                const = Arith("+", lit(target - k), lit(k))
            return Compare(self.pick("comparison_op"), c, const)
        elif kind == "distinct_from":
            c = rng.choice(cols)
            return Compare(rng.choice(["IS DISTINCT FROM", "IS NOT DISTINCT FROM"]), c, self.literal_for(c))
        elif kind == "is_true":
            c = rng.choice(cols)
            inner = Compare(self.pick("comparison_op"), c, self.literal_for(c))
            return IsTest(rng.choice(["TRUE", "FALSE"]), inner)
        c = rng.choice(cols)
        return Compare(self.pick("comparison_op"), c, self.literal_for(c))

    # -- SELECT --

    def select_items(self, cols) -> tuple:
        rng = self.rng
        items = []
        seen = set()
        for i in range(rng.randint(1, 4)):
            kind = self.pick("select_expr")
            expr = None
            if kind == "FUNC":
                expr = self.func(cols)
            elif kind == "arith":
                nums = [c for c in cols if c.type in NUMERIC]
                if nums:
                    c = rng.choice(nums)
                    op = rng.choice(["+", "-", "*"])
                    expr = Arith(op, c, lit(rng.randint(1, 10)))
            if expr is None:
                c = rng.choice(cols)
                if c.key in seen:
                    continue
                seen.add(c.key)
                items.append(item(c))
            else:
                items.append(Item(expr, None, f"c{len(items)}"))
        return tuple(items)

    def func(self, cols):
        rng = self.rng
        options = []
        for c in cols:
            if c.type == DATETIME:
                options.append(lambda c=c: extract(rng.choice(["YEAR", "MONTH"]), c))
            elif c.type == STRING:
                options.append(lambda c=c: Func(rng.choice(["LOWER", "UPPER"]), (c,), STRING))
                options.append(lambda c=c: Func("LENGTH", (c,), INTEGER))
            elif c.type == INTEGER:
                options.append(lambda c=c: cast(c, DOUBLE))
                options.append(lambda c=c: Func("ABS", (c,), INTEGER))
        return rng.choice(options)() if options else None

    def aggregate(self, cols, child: PlanNode) -> Aggregate:
        rng = self.rng
        groupable = [c for c in cols if c.type != DOUBLE]
        keys = tuple(rng.sample(groupable, min(len(groupable), rng.randint(1, 2)))) if groupable else ()
        aggs = []
        for i in range(rng.randint(0 if keys else 1, 2)):
            name = self.pick("aggregate")
            nums = [c for c in cols if c.type in NUMERIC]
            if name == "COUNT":
                arg = None if rng.random() < 0.5 else rng.choice(cols)
                call = AggCall("COUNT", arg, INTEGER)
            elif name in ("SUM", "AVG") and nums:
                arg = rng.choice(nums)
                call = AggCall(name, arg, DOUBLE if name == "AVG" else arg.type)
            elif name in ("MIN", "MAX"):
                arg = rng.choice(cols)
                call = AggCall(name, arg, arg.type)
            else:
                call = AggCall("COUNT", None, INTEGER)
            aggs.append(Item(call, None, f"c{i}"))
        return Aggregate(keys, tuple(aggs), child)

    # -- query --

    def query(self) -> PlanNode:
        source = self.table_ref()
        cols = output_columns(source)
        want_where = self.pick("where") == "present"
        grouped = self.pick("group_by") == "present"
        star = not grouped and self.pick("projection") == "star"
        items = None if grouped or star else self.select_items(cols)
        agg = self.aggregate(cols, source) if grouped else None

        def branch(force_where: bool) -> PlanNode:
            node = source
            if want_where or force_where:
                node = Filter(self.predicate(cols), node)
            if agg is not None:
                node = Aggregate(agg.keys, agg.aggs, node)
            elif items is not None:
                node = Project(items, node)
            return node

        node = branch(False)
        if self.pick("distinct") == "present":
            node = Distinct(node)
        union = self.pick("union")
        if union != "absent":
            node = Union(union == "UNION ALL", node, branch(True))
        if self.pick("order_by") == "present":
            out = output_columns(node)
            keys = self.rng.sample(out, min(len(out), self.rng.randint(1, 2)))
            node = Sort(tuple(SortKey(k, self.rng.random() < 0.7) for k in keys), node)
        if self.pick("limit") == "present":
            node = Limit(0 if self.rng.random() < 0.05 else self.rng.choice(_LIMITS), node)
        return node


def build_specification(schema: SchemaMetadata, samples: ValueSample, prob: ProbabilityTable,
                        rng: random.Random, max_joins: int = MAX_JOINS, retries: int = 50) -> PlanNode:
    """Draw one type-checked base plan; every random choice goes through ``prob``."""
    if not any(t.columns for t in schema.tables):
        raise GenerationExhausted("schema has no usable tables")
    for _ in range(retries):
        plan = _Builder(schema, samples, prob, rng, max_joins).query()
        ok, diags = type_check(plan, schema)
        if ok:
            return plan
        log.debug("discarding ill-typed plan: %s", diags)
    raise GenerationExhausted(f"no valid plan after {retries} attempts")
