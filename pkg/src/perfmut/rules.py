"""Semantics-preserving rewrite rules.

Each rule is an ``(id, category, condition, transformation)`` triple over a
single plan node.  Structural rules rewrite the first matching node found
top-down; expression rules rewrite every matching node.  See docs/rules.md.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Optional

from .ir import (
    BOOLEAN, DATETIME, FALSE, INTEGER, STRING,
    AggCall, Aggregate, Arith, BoolOp, Column, Compare, Distinct, Expr, Filter, Func, IsTest,
    Item, Join, Limit, Literal, PlanNode, Project, Scan, Sort, Union,
    and_, columns_in, conjuncts, expr_type, has_aggregate, item, map_expr, output_columns,
    replace_subexpr, walk_expr,
)

STRUCTURE = "structure"
EXPRESSION = "expression"

Condition = Callable[[PlanNode, object], bool]
Transformation = Callable[[PlanNode, object], PlanNode]


@dataclass(frozen=True)
class MutationRule:
    id: int
    category: str
    name: str
    condition: Condition
    transformation: Transformation

    def rewrite(self, node: PlanNode, schema) -> Optional[PlanNode]:
        if not self.condition(node, schema):
            return None
        out = self.transformation(node, schema)
        return None if out == node else out


# --------------------------------------------------------------------------
# shared analyses


def _keys(node: PlanNode) -> set:
    return {c.key for c in output_columns(node)}


def _cols(e: Expr) -> set:
    return set(columns_in(e))


def _is_false_literal(e: Expr) -> bool:
    return isinstance(e, Literal) and (e.value is None or e.value is False)


def provably_empty(node: PlanNode) -> bool:
    """True when ``node`` returns no rows on every database instance."""
    if isinstance(node, Filter):
        return _is_false_literal(node.predicate) or provably_empty(node.child)
    if isinstance(node, Limit):
        return node.count == 0 or provably_empty(node.child)
    if isinstance(node, (Project, Sort, Distinct)):
        return provably_empty(node.child)
    if isinstance(node, Aggregate):
        return bool(node.keys) and provably_empty(node.child)
    if isinstance(node, Join):
        if node.kind == "LEFT":
            return provably_empty(node.left)
        return provably_empty(node.left) or provably_empty(node.right)
    if isinstance(node, Union):
        return provably_empty(node.left) and provably_empty(node.right)
    return False


def _equalities(pred: Expr) -> dict:
    """``expr -> literal`` for top-level conjuncts ``expr = literal``."""
    out = {}
    for c in conjuncts(pred):
        if not (isinstance(c, Compare) and c.op == "="):
            continue
        for e, v in ((c.left, c.right), (c.right, c.left)):
            if (isinstance(v, Literal) and v.value is not None and v.type != BOOLEAN
                    and not isinstance(e, Literal) and _cols(e) and not has_aggregate(e)
                    and expr_type(e) == v.type):
                out.setdefault(e, v)
    return out


def known_constants(node: PlanNode) -> dict:
    """Expressions guaranteed equal to a constant on every output row of ``node``."""
    if isinstance(node, Filter):
        out = known_constants(node.child)
        for e, v in _equalities(node.predicate).items():
            out.setdefault(e, v)
        return out
    if isinstance(node, (Sort, Distinct, Limit)):
        return known_constants(node.child)
    if isinstance(node, Project):
        inner = known_constants(node.child)
        out = {}
        for it in node.items:
            if isinstance(it.expr, Column) and it.key == it.expr.key and it.expr in inner:
                out[it.expr] = inner[it.expr]
        return out
    if isinstance(node, Aggregate):
        inner = known_constants(node.child)
        return {k: inner[k] for k in node.keys if k in inner}
    if isinstance(node, Join):
        out = known_constants(node.left)
        if node.kind != "LEFT":
            for e, v in known_constants(node.right).items():
                out.setdefault(e, v)
            if node.condition is not None:
                for e, v in _equalities(node.condition).items():
                    out.setdefault(e, v)
        return out
    return {}


def _substitute(e: Expr, consts: dict) -> Expr:
    for old, new in consts.items():
        e = replace_subexpr(e, old, new)
    return e


# --------------------------------------------------------------------------
# rule 0: aggregate below join


def _agg_join_parts(node, schema):
    if not (isinstance(node, Aggregate) and node.keys and isinstance(node.child, Join)):
        return None
    join = node.child
    if isinstance(join.left, Aggregate):
        return None
    left = _keys(join.left)
    right = _keys(join.right)
    keys = {k.key for k in node.keys}
    if not keys <= left:
        return None
    if join.condition is not None and not (_cols(join.condition) & left) <= keys:
        return None
    for a in node.aggs:
        call = a.expr
        if not (isinstance(call, AggCall) and call.name in ("MIN", "MAX") and call.arg is not None):
            return None
        if not _cols(call.arg) <= (keys | right):
            return None
    return join


def _r0_apply(node: Aggregate, schema) -> PlanNode:
    join = node.child
    inner = Aggregate(node.keys, (), join.left)
    return Aggregate(node.keys, node.aggs, dataclasses.replace(join, left=inner))


# --------------------------------------------------------------------------
# rule 13: filter below group by


def _r13_split(node):
    keys = {k.key for k in node.child.keys}
    push, keep = [], []
    for c in conjuncts(node.predicate):
        cols = _cols(c)
        (push if cols and cols <= keys and not has_aggregate(c) else keep).append(c)
    return push, keep


def _r13_cond(node, schema) -> bool:
    return (isinstance(node, Filter) and isinstance(node.child, Aggregate) and bool(node.child.keys)
            and bool(_r13_split(node)[0]))


def _r13_apply(node: Filter, schema) -> PlanNode:
    push, keep = _r13_split(node)
    agg = node.child
    out = Aggregate(agg.keys, agg.aggs, Filter(and_(*push), agg.child))
    return Filter(and_(*keep), out) if keep else out


# --------------------------------------------------------------------------
# rule 16: filter below join


def _r16_split(node):
    join = node.child
    left, right = _keys(join.left), _keys(join.right)
    to_left, to_right, keep = [], [], []
    for c in conjuncts(node.predicate):
        cols = _cols(c)
        if cols and cols <= left:
            to_left.append(c)
        elif cols and cols <= right and join.kind != "LEFT":
            to_right.append(c)
        else:
            keep.append(c)
    return to_left, to_right, keep


def _r16_cond(node, schema) -> bool:
    if not (isinstance(node, Filter) and isinstance(node.child, Join)):
        return False
    to_left, to_right, _ = _r16_split(node)
    return bool(to_left or to_right)


def _r16_apply(node: Filter, schema) -> PlanNode:
    to_left, to_right, keep = _r16_split(node)
    join = node.child
    left = Filter(and_(*to_left), join.left) if to_left else join.left
    right = Filter(and_(*to_right), join.right) if to_right else join.right
    out = dataclasses.replace(join, left=left, right=right)
    return Filter(and_(*keep), out) if keep else out


# --------------------------------------------------------------------------
# rule 51: sort over empty input


def _r51_cond(node, schema) -> bool:
    return isinstance(node, Sort) and provably_empty(node.child)


def _r51_apply(node: Sort, schema) -> PlanNode:
    return node.child


# --------------------------------------------------------------------------
# rule 59: copy LIMIT below LEFT JOIN


def _r59_join(node):
    if not isinstance(node, Limit):
        return None
    below = node.child
    if isinstance(below, Project):
        below = below.child
    if isinstance(below, Join) and below.kind == "LEFT":
        if isinstance(below.left, Limit) and below.left.count <= node.count:
            return None
        return below
    return None


def _r59_cond(node, schema) -> bool:
    return _r59_join(node) is not None


def _r59_apply(node: Limit, schema) -> PlanNode:
    join = _r59_join(node)
    pushed = dataclasses.replace(join, left=Limit(node.count, join.left))
    if isinstance(node.child, Project):
        return Limit(node.count, dataclasses.replace(node.child, child=pushed))
    return Limit(node.count, pushed)


# --------------------------------------------------------------------------
# rule 15: EXTRACT(YEAR ...) comparison to a timestamp range

_FLIP = {"=": "=", "<>": "<>", "<": ">", ">": "<", "<=": ">=", ">=": "<="}


def _year_ts(year: int) -> Literal:
    return Literal(f"{year:04d}-01-01 00:00:00", DATETIME)


def _extract_compare(e: Expr):
    if not (isinstance(e, Compare) and e.op in _FLIP):
        return None
    for f, v, op in ((e.left, e.right, e.op), (e.right, e.left, _FLIP[e.op])):
        if (isinstance(f, Func) and f.name == "EXTRACT" and f.param == "YEAR"
                and expr_type(f.args[0]) == DATETIME and isinstance(v, Literal)
                and v.type == INTEGER and v.value is not None and 1 <= v.value <= 9998):
            return f.args[0], op, v.value
    return None


def _year_range(e: Expr) -> Expr:
    parts = _extract_compare(e)
    if parts is None:
        return e
    c, op, y = parts
    lo, hi = _year_ts(y), _year_ts(y + 1)
    if op == "=":
        return and_(Compare(">=", c, lo), Compare("<", c, hi))
    if op == "<>":
        return BoolOp("OR", (Compare("<", c, lo), Compare(">=", c, hi)))
    if op == "<":
        return Compare("<", c, lo)
    if op == "<=":
        return Compare("<", c, hi)
    if op == ">":
        return Compare(">=", c, hi)
    return Compare(">=", c, lo)


def _pred_exprs(node):
    if isinstance(node, Filter):
        return [node.predicate]
    if isinstance(node, Join) and node.condition is not None:
        return [node.condition]
    return []


def _with_pred(node, fn):
    if isinstance(node, Filter):
        return dataclasses.replace(node, predicate=fn(node.predicate))
    return dataclasses.replace(node, condition=fn(node.condition))


def _r15_cond(node, schema) -> bool:
    return any(_extract_compare(x) for e in _pred_exprs(node) for x in walk_expr(e))


def _r15_apply(node, schema) -> PlanNode:
    return _with_pred(node, lambda e: map_expr(e, _year_range))


# --------------------------------------------------------------------------
# rule 54: integer constant folding in filters


def _int_lit(e) -> bool:
    return isinstance(e, Literal) and e.type == INTEGER and e.value is not None


def _fold(e: Expr) -> Expr:
    if isinstance(e, Arith) and _int_lit(e.left) and _int_lit(e.right):
        a, b = e.left.value, e.right.value
        if e.op == "+":
            return Literal(a + b, INTEGER)
        if e.op == "-":
            return Literal(a - b, INTEGER)
        if e.op == "*":
            return Literal(a * b, INTEGER)
        if e.op == "/" and b != 0:
            q = abs(a) // abs(b)
            return Literal(q if (a >= 0) == (b > 0) else -q, INTEGER)
    if (isinstance(e, Func) and e.name == "CAST" and e.type == INTEGER and e.param is None
            and _int_lit(e.args[0])):
        return e.args[0]
    return e


def _r54_cond(node, schema) -> bool:
    return isinstance(node, Filter) and any(_fold(x) is not x for x in walk_expr(node.predicate))


def _r54_apply(node: Filter, schema) -> PlanNode:
    return dataclasses.replace(node, predicate=map_expr(node.predicate, _fold))


# --------------------------------------------------------------------------
# rule 55: reduce join conditions (known constants, redundant casts)


def _drop_int_cast(e: Expr) -> Expr:
    if (isinstance(e, Func) and e.name == "CAST" and e.type == INTEGER and e.param is None
            and expr_type(e.args[0]) == INTEGER):
        return e.args[0]
    return e


def _side_constants(join: Join, for_filter: bool) -> dict:
    out = known_constants(join.left)
    if not for_filter or join.kind != "LEFT":
        for e, v in known_constants(join.right).items():
            out.setdefault(e, v)
    return out


def _r55_rewrite(node) -> PlanNode:
    if isinstance(node, Join) and node.condition is not None:
        cond = _substitute(node.condition, _side_constants(node, False))
        cond = map_expr(cond, _drop_int_cast)
        return dataclasses.replace(node, condition=cond)
    if isinstance(node, Filter) and isinstance(node.child, Join):
        consts = _side_constants(node.child, True)
        return dataclasses.replace(node, predicate=_substitute(node.predicate, consts))
    return node


def _r55_cond(node, schema) -> bool:
    return _r55_rewrite(node) != node


def _r55_apply(node, schema) -> PlanNode:
    return _r55_rewrite(node)


# --------------------------------------------------------------------------
# rule 100: projection column -> literal known from a filter


def _cast_literal(v: Literal) -> Func:
    length = None
    if v.type == STRING:
        length = 10 * max(1, math.ceil(len(v.value) / 10))
    return Func("CAST", (v,), v.type, length)


def _r100_target(node):
    if isinstance(node, Project):
        consts = known_constants(node.child)
        hits = [i for i, it in enumerate(node.items) if isinstance(it.expr, Column) and it.expr in consts]
        return (consts, hits) if hits else None
    if isinstance(node, Aggregate):
        consts = known_constants(node.child)
        if any(k in consts for k in node.keys):
            return consts, None
    return None


def _r100_cond(node, schema) -> bool:
    return _r100_target(node) is not None


def _r100_apply(node, schema) -> PlanNode:
    consts, hits = _r100_target(node)
    if isinstance(node, Aggregate):
        items = []
        for c in output_columns(node):
            it = item(c)
            if c in consts:
                it = Item(_cast_literal(consts[c]), c.table, c.name)
            items.append(it)
        return Project(tuple(items), node)
    items = list(node.items)
    for i in hits:
        it = items[i]
        items[i] = Item(_cast_literal(consts[it.expr]), it.table, it.name)
    return Project(tuple(items), node.child)


# --------------------------------------------------------------------------
# rules 101/102: filter split and merge


def _r101_cond(node, schema) -> bool:
    return isinstance(node, Filter) and len(conjuncts(node.predicate)) >= 2


def _r101_apply(node: Filter, schema) -> PlanNode:
    first, *rest = conjuncts(node.predicate)
    return Filter(first, Filter(and_(*rest), node.child))


def _r102_cond(node, schema) -> bool:
    return isinstance(node, Filter) and isinstance(node.child, Filter)


def _r102_apply(node: Filter, schema) -> PlanNode:
    return Filter(and_(node.predicate, node.child.predicate), node.child.child)


# --------------------------------------------------------------------------
# rule 103: commute INNER/CROSS joins


def _r103_cond(node, schema) -> bool:
    return isinstance(node, Join) and node.kind in ("INNER", "CROSS")


def _r103_apply(node: Join, schema) -> PlanNode:
    restore = tuple(item(c) for c in output_columns(node))
    return Project(restore, dataclasses.replace(node, left=node.right, right=node.left))


# --------------------------------------------------------------------------
# rule 104: pull a filter above a projection


def _passthrough_keys(p: Project) -> set:
    return {it.key for it in p.items if isinstance(it.expr, Column) and it.key == it.expr.key}


def _r104_cond(node, schema) -> bool:
    return (isinstance(node, Project) and isinstance(node.child, Filter)
            and _cols(node.child.predicate) <= _passthrough_keys(node)
            and not any(has_aggregate(it.expr) for it in node.items))


def _r104_apply(node: Project, schema) -> PlanNode:
    f = node.child
    return Filter(f.predicate, Project(node.items, f.child))


# --------------------------------------------------------------------------
# rule 105: LIMIT 0 -> empty filter


def _r105_cond(node, schema) -> bool:
    return isinstance(node, Limit) and node.count == 0


def _r105_apply(node: Limit, schema) -> PlanNode:
    return Filter(FALSE, node.child)


# --------------------------------------------------------------------------
# rule 106: drop GROUP BY / DISTINCT made redundant by a unique key


def _unique_scan(node: PlanNode):
    while isinstance(node, Filter):
        node = node.child
    return node if isinstance(node, Scan) else None


def _covers_unique(scan: Scan, keys: set, schema) -> bool:
    meta = schema.table(scan.table) if schema is not None else None
    if meta is None:
        return False
    for u in meta.unique_sets():
        cols = [meta.column(c) for c in u]
        if all(c is not None and not c.nullable for c in cols) and {(scan.alias, c) for c in u} <= keys:
            return True
    return False


def _r106_cond(node, schema) -> bool:
    if isinstance(node, Aggregate) and node.keys and not node.aggs:
        scan = _unique_scan(node.child)
        return scan is not None and _covers_unique(scan, {k.key for k in node.keys}, schema)
    if isinstance(node, Distinct) and isinstance(node.child, Project):
        scan = _unique_scan(node.child.child)
        return scan is not None and _covers_unique(scan, _passthrough_keys(node.child), schema)
    return False


def _r106_apply(node, schema) -> PlanNode:
    if isinstance(node, Aggregate):
        return Project(tuple(item(k) for k in node.keys), node.child)
    return node.child


# --------------------------------------------------------------------------
# rule 107: prune a provably empty UNION branch


def _r107_cond(node, schema) -> bool:
    return isinstance(node, Union) and (provably_empty(node.left) or provably_empty(node.right))


def _r107_apply(node: Union, schema) -> PlanNode:
    if provably_empty(node.right):
        kept = node.left
    else:
        names = output_columns(node.left)
        kept = Project(
            tuple(Item(c, n.table, n.name) for c, n in zip(output_columns(node.right), names)),
            node.right,
        )
    return kept if node.all else Distinct(kept)


# --------------------------------------------------------------------------
# rule 108: drop IS TRUE on top-level filter/join conjuncts


def _strip_is_true(e: Expr) -> Expr:
    parts = [c.operand if isinstance(c, IsTest) and c.test == "TRUE" else c for c in conjuncts(e)]
    return and_(*parts)


def _r108_cond(node, schema) -> bool:
    return any(isinstance(c, IsTest) and c.test == "TRUE"
               for e in _pred_exprs(node) for c in conjuncts(e))


def _r108_apply(node, schema) -> PlanNode:
    return _with_pred(node, _strip_is_true)


CATALOG = (
    MutationRule(0, STRUCTURE, "push aggregate through join", lambda n, s: _agg_join_parts(n, s) is not None, _r0_apply),
    MutationRule(13, STRUCTURE, "push filter through group by", _r13_cond, _r13_apply),
    MutationRule(16, STRUCTURE, "push filter through join", _r16_cond, _r16_apply),
    MutationRule(51, STRUCTURE, "remove sort on empty input", _r51_cond, _r51_apply),
    MutationRule(59, STRUCTURE, "copy limit through left join", _r59_cond, _r59_apply),
    MutationRule(15, EXPRESSION, "extract year to timestamp range", _r15_cond, _r15_apply),
    MutationRule(54, EXPRESSION, "fold integer constants in filter", _r54_cond, _r54_apply),
    MutationRule(55, EXPRESSION, "reduce join condition", _r55_cond, _r55_apply),
    MutationRule(100, STRUCTURE, "projection column to known literal", _r100_cond, _r100_apply),
    MutationRule(101, STRUCTURE, "split conjunctive filter", _r101_cond, _r101_apply),
    MutationRule(102, STRUCTURE, "merge stacked filters", _r102_cond, _r102_apply),
    MutationRule(103, STRUCTURE, "commute inner or cross join", _r103_cond, _r103_apply),
    MutationRule(104, STRUCTURE, "pull filter above projection", _r104_cond, _r104_apply),
    MutationRule(105, STRUCTURE, "limit zero to empty filter", _r105_cond, _r105_apply),
    MutationRule(106, STRUCTURE, "drop grouping on unique key", _r106_cond, _r106_apply),
    MutationRule(107, STRUCTURE, "prune empty union branch", _r107_cond, _r107_apply),
    MutationRule(108, EXPRESSION, "drop IS TRUE in filter context", _r108_cond, _r108_apply),
)

RULES_BY_ID = {r.id: r for r in CATALOG}


def select_rules(ids=None) -> tuple:
    if ids is None:
        return CATALOG
    unknown = [i for i in ids if i not in RULES_BY_ID]
    if unknown:
        raise ValueError(f"unknown rule ids {unknown}")
    return tuple(RULES_BY_ID[i] for i in ids)
