"""Logical plan IR: expressions, plan nodes, traversal, normalization, type checking.

All values are frozen dataclasses, so plans are hashable and compare
structurally.  A column is identified by its *key* ``(qualifier, name)``:
base columns carry the scan alias as qualifier, derived columns carry
``None``.  Parents reference child outputs by key, which lets rules rebuild
subtrees without renaming anything above them.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any, Callable, Iterator, Optional

INTEGER = "integer"
DOUBLE = "double"
STRING = "string"
DATETIME = "datetime"
BOOLEAN = "boolean"

COLUMN_TYPES = (INTEGER, DOUBLE, STRING, DATETIME)
ALL_TYPES = COLUMN_TYPES + (BOOLEAN,)
NUMERIC = frozenset({INTEGER, DOUBLE})

COMPARISON_OPS = ("=", "<", ">", "<=", ">=", "<>")
PATTERN_OPS = ("LIKE", "NOT LIKE")
DISTINCT_OPS = ("IS DISTINCT FROM", "IS NOT DISTINCT FROM")
ALL_COMPARE_OPS = COMPARISON_OPS + PATTERN_OPS + DISTINCT_OPS
IS_TESTS = ("TRUE", "FALSE", "NULL", "NOT NULL")
ARITH_OPS = ("+", "-", "*", "/")
AGG_FUNCS = ("COUNT", "SUM", "AVG", "MIN", "MAX")
SCALAR_FUNCS = ("EXTRACT", "CAST", "ABS", "LOWER", "UPPER", "LENGTH")
EXTRACT_FIELDS = ("YEAR", "MONTH", "DAY")
JOIN_KINDS = ("INNER", "LEFT", "CROSS")

Key = tuple  # (qualifier or None, name)


# --------------------------------------------------------------------------
# expressions


@dataclass(frozen=True)
class Expr:
    pass


@dataclass(frozen=True)
class Column(Expr):
    table: Optional[str]
    name: str
    type: str

    @property
    def key(self) -> Key:
        return (self.table, self.name)


@dataclass(frozen=True)
class Literal(Expr):
    """A typed constant.  ``value is None`` is a typed NULL.

    Datetimes are held in canonical ``YYYY-MM-DD HH:MM:SS`` text form.
    """

    value: Any
    type: str


@dataclass(frozen=True)
class Compare(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class IsTest(Expr):
    test: str
    operand: Expr


@dataclass(frozen=True)
class BoolOp(Expr):
    op: str
    args: tuple


@dataclass(frozen=True)
class Not(Expr):
    arg: Expr


@dataclass(frozen=True)
class Arith(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Func(Expr):
    """Scalar function.  ``param`` is the EXTRACT field or the CAST length."""

    name: str
    args: tuple
    type: str
    param: Any = None


@dataclass(frozen=True)
class AggCall(Expr):
    name: str
    arg: Optional[Expr]
    type: str


TRUE = Literal(True, BOOLEAN)
FALSE = Literal(False, BOOLEAN)


def lit(value, type_=None) -> Literal:
    if type_ is None:
        if isinstance(value, bool):
            type_ = BOOLEAN
        elif isinstance(value, int):
            type_ = INTEGER
        elif isinstance(value, float):
            type_ = DOUBLE
        else:
            type_ = STRING
    return Literal(value, type_)


def extract(field: str, arg: Expr) -> Func:
    return Func("EXTRACT", (arg,), INTEGER, field)


def cast(arg: Expr, type_: str, length: Optional[int] = None) -> Func:
    return Func("CAST", (arg,), type_, length)


def and_(*args: Expr) -> Expr:
    flat = []
    for a in args:
        if isinstance(a, BoolOp) and a.op == "AND":
            flat.extend(a.args)
        else:
            flat.append(a)
    if len(flat) == 1:
        return flat[0]
    return BoolOp("AND", tuple(flat))


def or_(*args: Expr) -> Expr:
    return args[0] if len(args) == 1 else BoolOp("OR", tuple(args))


def conjuncts(e: Expr) -> list:
    if isinstance(e, BoolOp) and e.op == "AND":
        out = []
        for a in e.args:
            out.extend(conjuncts(a))
        return out
    return [e]


def expr_type(e: Expr) -> str:
    if isinstance(e, (Column, Literal, Func, AggCall)):
        return e.type
    if isinstance(e, Arith):
        lt, rt = expr_type(e.left), expr_type(e.right)
        return DOUBLE if DOUBLE in (lt, rt) else INTEGER
    return BOOLEAN


def expr_children(e: Expr) -> tuple:
    if isinstance(e, (Compare, Arith)):
        return (e.left, e.right)
    if isinstance(e, IsTest):
        return (e.operand,)
    if isinstance(e, Not):
        return (e.arg,)
    if isinstance(e, (BoolOp, Func)):
        return e.args
    if isinstance(e, AggCall):
        return () if e.arg is None else (e.arg,)
    return ()


def _with_expr_children(e: Expr, kids: tuple) -> Expr:
    if isinstance(e, (Compare, Arith)):
        return dataclasses.replace(e, left=kids[0], right=kids[1])
    if isinstance(e, IsTest):
        return dataclasses.replace(e, operand=kids[0])
    if isinstance(e, Not):
        return Not(kids[0])
    if isinstance(e, (BoolOp, Func)):
        return dataclasses.replace(e, args=tuple(kids))
    if isinstance(e, AggCall) and kids:
        return dataclasses.replace(e, arg=kids[0])
    return e


def walk_expr(e: Expr) -> Iterator[Expr]:
    yield e
    for c in expr_children(e):
        yield from walk_expr(c)


def map_expr(e: Expr, fn: Callable[[Expr], Expr]) -> Expr:
    """Rebuild ``e`` bottom-up, applying ``fn`` to every subexpression."""
    kids = expr_children(e)
    if kids:
        new_kids = tuple(map_expr(k, fn) for k in kids)
        if new_kids != kids:
            e = _with_expr_children(e, new_kids)
    return fn(e)


def replace_subexpr(e: Expr, old: Expr, new: Expr) -> Expr:
    return map_expr(e, lambda x: new if x == old else x)


def columns_in(e: Expr) -> set:
    return {x.key for x in walk_expr(e) if isinstance(x, Column)}


def has_aggregate(e: Expr) -> bool:
    return any(isinstance(x, AggCall) for x in walk_expr(e))


def is_constant(e: Expr) -> bool:
    return not any(isinstance(x, (Column, AggCall)) for x in walk_expr(e))


# --------------------------------------------------------------------------
# plan nodes


@dataclass(frozen=True)
class PlanNode:
    def children(self) -> tuple:
        return tuple(
            getattr(self, f.name)
            for f in dataclasses.fields(self)
            if f.name in ("child", "left", "right")
        )

    def with_children(self, *kids) -> "PlanNode":
        names = [f.name for f in dataclasses.fields(self) if f.name in ("child", "left", "right")]
        return dataclasses.replace(self, **dict(zip(names, kids)))


@dataclass(frozen=True)
class Item:
    """A projection entry: expression plus the output key it defines."""

    expr: Expr
    table: Optional[str]
    name: str

    @property
    def key(self) -> Key:
        return (self.table, self.name)


@dataclass(frozen=True)
class SortKey:
    expr: Expr
    ascending: bool = True


@dataclass(frozen=True)
class Scan(PlanNode):
    table: str
    alias: str
    columns: tuple  # ((name, type), ...)


@dataclass(frozen=True)
class Filter(PlanNode):
    predicate: Expr
    child: PlanNode


@dataclass(frozen=True)
class Project(PlanNode):
    items: tuple
    child: PlanNode


@dataclass(frozen=True)
class Join(PlanNode):
    kind: str
    left: PlanNode
    right: PlanNode
    condition: Optional[Expr] = None


@dataclass(frozen=True)
class Aggregate(PlanNode):
    keys: tuple  # Columns
    aggs: tuple  # Items whose expr is an AggCall
    child: PlanNode


@dataclass(frozen=True)
class Distinct(PlanNode):
    child: PlanNode


@dataclass(frozen=True)
class Sort(PlanNode):
    keys: tuple  # SortKeys
    child: PlanNode


@dataclass(frozen=True)
class Limit(PlanNode):
    count: int
    child: PlanNode


@dataclass(frozen=True)
class Union(PlanNode):
    all: bool
    left: PlanNode
    right: PlanNode


def item(col: Column) -> Item:
    """Pass-through projection item keeping the column's key."""
    return Item(col, col.table, col.name)


def output_columns(node: PlanNode) -> tuple:
    """Columns (as referenceable Column exprs) produced by ``node``, in order."""
    if isinstance(node, Scan):
        return tuple(Column(node.alias, n, t) for n, t in node.columns)
    if isinstance(node, (Filter, Distinct, Sort, Limit)):
        return output_columns(node.child)
    if isinstance(node, Project):
        return tuple(Column(i.table, i.name, expr_type(i.expr)) for i in node.items)
    if isinstance(node, Join):
        return output_columns(node.left) + output_columns(node.right)
    if isinstance(node, Aggregate):
        return tuple(node.keys) + tuple(Column(a.table, a.name, expr_type(a.expr)) for a in node.aggs)
    if isinstance(node, Union):
        return output_columns(node.left)
    raise TypeError(f"unknown plan node {type(node).__name__}")


def node_exprs(node: PlanNode) -> list:
    if isinstance(node, Filter):
        return [node.predicate]
    if isinstance(node, Project):
        return [i.expr for i in node.items]
    if isinstance(node, Join):
        return [] if node.condition is None else [node.condition]
    if isinstance(node, Aggregate):
        return list(node.keys) + [a.expr for a in node.aggs]
    if isinstance(node, Sort):
        return [k.expr for k in node.keys]
    return []


def map_node_exprs(node: PlanNode, fn: Callable[[Expr], Expr]) -> PlanNode:
    """Apply ``fn`` to each top-level expression held by ``node``."""
    if isinstance(node, Filter):
        return dataclasses.replace(node, predicate=fn(node.predicate))
    if isinstance(node, Project):
        return dataclasses.replace(
            node, items=tuple(dataclasses.replace(i, expr=fn(i.expr)) for i in node.items)
        )
    if isinstance(node, Join) and node.condition is not None:
        return dataclasses.replace(node, condition=fn(node.condition))
    if isinstance(node, Aggregate):
        return dataclasses.replace(
            node,
            keys=tuple(fn(k) for k in node.keys),
            aggs=tuple(dataclasses.replace(a, expr=fn(a.expr)) for a in node.aggs),
        )
    if isinstance(node, Sort):
        return dataclasses.replace(
            node, keys=tuple(dataclasses.replace(k, expr=fn(k.expr)) for k in node.keys)
        )
    return node


def walk(node: PlanNode) -> Iterator[PlanNode]:
    """Pre-order (top-down) traversal."""
    yield node
    for c in node.children():
        yield from walk(c)


def transform_first(node: PlanNode, fn: Callable[[PlanNode], Optional[PlanNode]]):
    """Top-down: rewrite the first node where ``fn`` returns a new node.

    Returns ``(new_plan, fired)``.
    """
    out = fn(node)
    if out is not None:
        return out, True
    kids = node.children()
    for i, kid in enumerate(kids):
        new_kid, fired = transform_first(kid, fn)
        if fired:
            new_kids = kids[:i] + (new_kid,) + kids[i + 1:]
            return node.with_children(*new_kids), True
    return node, False


def transform_all(node: PlanNode, fn: Callable[[PlanNode], Optional[PlanNode]]):
    """Top-down: rewrite every node where ``fn`` returns a new node.

    A rewritten node is not revisited; its children are.
    """
    fired = False
    out = fn(node)
    if out is not None:
        node, fired = out, True
    kids = node.children()
    new_kids = []
    for kid in kids:
        nk, f = transform_all(kid, fn)
        fired = fired or f
        new_kids.append(nk)
    if tuple(new_kids) != kids:
        node = node.with_children(*new_kids)
    return node, fired


def shape(node: PlanNode) -> str:
    """Payload-free skeleton of a plan, e.g. ``Limit(Join[LEFT](Scan,Scan))``."""
    name = type(node).__name__
    if isinstance(node, Join):
        name += f"[{node.kind}]"
    elif isinstance(node, Union):
        name += "[ALL]" if node.all else ""
    kids = node.children()
    if not kids:
        return name
    return name + "(" + ",".join(shape(k) for k in kids) + ")"


# --------------------------------------------------------------------------
# normalization / equality


def _sort_key(e: Expr) -> str:
    return repr(e)


def normalize_expr(e: Expr) -> Expr:
    def fn(x):
        if isinstance(x, BoolOp):
            flat = []
            for a in x.args:
                if isinstance(a, BoolOp) and a.op == x.op:
                    flat.extend(a.args)
                else:
                    flat.append(a)
            return BoolOp(x.op, tuple(sorted(flat, key=_sort_key)))
        return x

    return map_expr(e, fn)


def normalize(node: PlanNode) -> PlanNode:
    """Canonical form used for equality: AND/OR operands flattened and sorted.

    Join operands are never reordered.
    """
    node = map_node_exprs(node, normalize_expr)
    kids = node.children()
    if kids:
        node = node.with_children(*(normalize(k) for k in kids))
    return node


def plan_equal(a: PlanNode, b: PlanNode) -> bool:
    return normalize(a) == normalize(b)


# --------------------------------------------------------------------------
# type checking


def _compatible(a: str, b: str) -> bool:
    if a == b:
        return True
    return a in NUMERIC and b in NUMERIC


def _check_expr(e: Expr, env: dict, allow_agg: bool, diags: list, where: str) -> Optional[str]:
    if isinstance(e, Column):
        if e.key not in env:
            diags.append(f"{where}: unresolved column {e.table}.{e.name}")
            return None
        if env[e.key] != e.type:
            diags.append(f"{where}: column {e.table}.{e.name} typed {e.type}, source is {env[e.key]}")
        return e.type
    if isinstance(e, Literal):
        if e.type not in ALL_TYPES:
            diags.append(f"{where}: literal of unknown type {e.type}")
        return e.type
    if isinstance(e, AggCall):
        if not allow_agg:
            diags.append(f"{where}: aggregate {e.name} outside an aggregate position")
        if e.name not in AGG_FUNCS:
            diags.append(f"{where}: unknown aggregate {e.name}")
        if e.arg is not None:
            t = _check_expr(e.arg, env, False, diags, where)
            if e.name in ("SUM", "AVG") and t is not None and t not in NUMERIC:
                diags.append(f"{where}: {e.name} over non-numeric {t}")
        elif e.name != "COUNT":
            diags.append(f"{where}: {e.name} requires an argument")
        return e.type
    kid_types = [_check_expr(k, env, allow_agg, diags, where) for k in expr_children(e)]
    if any(t is None for t in kid_types):
        return expr_type(e)
    if isinstance(e, Compare):
        lt, rt = kid_types
        if e.op not in ALL_COMPARE_OPS:
            diags.append(f"{where}: unknown comparison {e.op}")
        elif e.op in PATTERN_OPS and (lt != STRING or rt != STRING):
            diags.append(f"{where}: {e.op} needs string operands, got {lt}/{rt}")
        elif not _compatible(lt, rt):
            diags.append(f"{where}: incompatible comparison {lt} {e.op} {rt}")
    elif isinstance(e, IsTest):
        if e.test not in IS_TESTS:
            diags.append(f"{where}: unknown IS test {e.test}")
        elif e.test in ("TRUE", "FALSE") and kid_types[0] != BOOLEAN:
            diags.append(f"{where}: IS {e.test} over {kid_types[0]}")
    elif isinstance(e, (BoolOp, Not)):
        if isinstance(e, BoolOp) and e.op not in ("AND", "OR"):
            diags.append(f"{where}: unknown boolean operator {e.op}")
        for t in kid_types:
            if t != BOOLEAN:
                diags.append(f"{where}: boolean operand of type {t}")
    elif isinstance(e, Arith):
        if e.op not in ARITH_OPS:
            diags.append(f"{where}: unknown arithmetic operator {e.op}")
        for t in kid_types:
            if t not in NUMERIC:
                diags.append(f"{where}: arithmetic over {t}")
    elif isinstance(e, Func):
        if e.name not in SCALAR_FUNCS:
            diags.append(f"{where}: unknown function {e.name}")
        elif e.name == "EXTRACT":
            if kid_types[0] != DATETIME or e.param not in EXTRACT_FIELDS:
                diags.append(f"{where}: bad EXTRACT({e.param} FROM {kid_types[0]})")
        elif e.name in ("LOWER", "UPPER", "LENGTH") and kid_types[0] != STRING:
            diags.append(f"{where}: {e.name} over {kid_types[0]}")
        elif e.name == "ABS" and kid_types[0] not in NUMERIC:
            diags.append(f"{where}: ABS over {kid_types[0]}")
    return expr_type(e)


def _check_node(node: PlanNode, schema, diags: list) -> Optional[tuple]:
    """Returns the output columns, or None if the subtree is unusable."""
    where = type(node).__name__
    kid_outputs = [_check_node(k, schema, diags) for k in node.children()]
    if any(o is None for o in kid_outputs):
        return None
    if isinstance(node, Scan):
        table = schema.table(node.table) if schema is not None else None
        if schema is not None and table is None:
            diags.append(f"Scan: unknown table {node.table}")
            return None
        if table is not None:
            known = {c.name: c.type for c in table.columns}
            for n, t in node.columns:
                if n not in known:
                    diags.append(f"Scan: unknown column {node.table}.{n}")
                elif known[n] != t:
                    diags.append(f"Scan: column {node.table}.{n} is {known[n]}, not {t}")
        return output_columns(node)
    env = {}
    for out in kid_outputs:
        for c in out:
            env[c.key] = c.type
    if isinstance(node, Join):
        if node.kind not in JOIN_KINDS:
            diags.append(f"Join: unknown join type {node.kind}")
        if node.kind == "CROSS" and node.condition is not None:
            diags.append("Join: CROSS join with a condition")
        left_keys = {c.key for c in kid_outputs[0]}
        if left_keys & {c.key for c in kid_outputs[1]}:
            diags.append("Join: both inputs produce the same column key")
    for e in node_exprs(node):
        allow = isinstance(node, Aggregate)
        t = _check_expr(e, env, allow, diags, where)
        if isinstance(node, (Filter, Join)) and t is not None and t != BOOLEAN:
            diags.append(f"{where}: predicate of type {t}")
    if isinstance(node, Filter) and has_aggregate(node.predicate):
        diags.append("Filter: aggregate in predicate")
    if isinstance(node, Aggregate):
        for k in node.keys:
            if not isinstance(k, Column):
                diags.append("Aggregate: grouping key is not a column")
        for a in node.aggs:
            if not isinstance(a.expr, AggCall):
                diags.append("Aggregate: output is not an aggregate call")
        if not node.keys and not node.aggs:
            diags.append("Aggregate: no outputs")
    if isinstance(node, Project) and not node.items:
        diags.append("Project: empty projection")
    if isinstance(node, Limit) and (not isinstance(node.count, int) or node.count < 0):
        diags.append(f"Limit: invalid count {node.count!r}")
    if isinstance(node, Union):
        lt = [c.type for c in kid_outputs[0]]
        rt = [c.type for c in kid_outputs[1]]
        if len(lt) != len(rt) or not all(_compatible(a, b) for a, b in zip(lt, rt)):
            diags.append(f"Union: branch types differ {lt} vs {rt}")
    out = output_columns(node)
    keys = [c.key for c in out]
    if len(set(keys)) != len(keys):
        diags.append(f"{where}: duplicate output keys")
    return out


def type_check(plan: PlanNode, schema=None) -> tuple:
    """Check every IR invariant of ``plan``; returns ``(ok, diagnostics)``."""
    diags: list = []
    try:
        _check_node(plan, schema, diags)
    except RecursionError:
        diags.append("plan too deep")
    return (not diags, diags)


# --------------------------------------------------------------------------
# pretty printing


def expr_text(e: Expr) -> str:
    if isinstance(e, Column):
        return e.name if e.table is None else f"{e.table}.{e.name}"
    if isinstance(e, Literal):
        if e.value is None:
            return f"NULL::{e.type}"
        if e.type == BOOLEAN:
            return "TRUE" if e.value else "FALSE"
        if e.type == STRING:
            return "'" + str(e.value).replace("'", "''") + "'"
        if e.type == DATETIME:
            return f"TIMESTAMP '{e.value}'"
        return repr(e.value)
    if isinstance(e, Compare):
        return f"{_paren(e.left)} {e.op} {_paren(e.right)}"
    if isinstance(e, IsTest):
        return f"{_paren(e.operand)} IS {e.test}"
    if isinstance(e, BoolOp):
        return f" {e.op} ".join(_paren(a) for a in e.args)
    if isinstance(e, Not):
        return f"NOT ({expr_text(e.arg)})"
    if isinstance(e, Arith):
        return f"{_paren(e.left)} {e.op} {_paren(e.right)}"
    if isinstance(e, Func):
        if e.name == "EXTRACT":
            return f"EXTRACT({e.param} FROM {expr_text(e.args[0])})"
        if e.name == "CAST":
            suffix = f"({e.param})" if e.param else ""
            return f"CAST({expr_text(e.args[0])} AS {e.type}{suffix})"
        return f"{e.name}({', '.join(expr_text(a) for a in e.args)})"
    if isinstance(e, AggCall):
        return f"{e.name}({'*' if e.arg is None else expr_text(e.arg)})"
    raise TypeError(type(e).__name__)


def _paren(e: Expr) -> str:
    text = expr_text(e)
    if isinstance(e, (Compare, BoolOp, Arith, IsTest, Not)):
        return f"({text})"
    return text


def _node_line(node: PlanNode) -> str:
    if isinstance(node, Scan):
        return f"Scan({node.table})" if node.alias == node.table else f"Scan({node.table} AS {node.alias})"
    if isinstance(node, Filter):
        return f"Filter({expr_text(node.predicate)})"
    if isinstance(node, Project):
        parts = []
        for i in node.items:
            text = expr_text(i.expr)
            if not (isinstance(i.expr, Column) and i.expr.key == i.key):
                text += f" AS {i.name}"
            parts.append(text)
        return f"Project({', '.join(parts)})"
    if isinstance(node, Join):
        cond = "" if node.condition is None else f" ON {expr_text(node.condition)}"
        return f"Join[{node.kind}]{cond}"
    if isinstance(node, Aggregate):
        keys = ", ".join(expr_text(k) for k in node.keys)
        aggs = ", ".join(f"{expr_text(a.expr)} AS {a.name}" for a in node.aggs)
        return f"Aggregate(keys=[{keys}], aggs=[{aggs}])"
    if isinstance(node, Distinct):
        return "Distinct"
    if isinstance(node, Sort):
        keys = ", ".join(expr_text(k.expr) + ("" if k.ascending else " DESC") for k in node.keys)
        return f"Sort({keys})"
    if isinstance(node, Limit):
        return f"Limit({node.count})"
    if isinstance(node, Union):
        return "UnionAll" if node.all else "Union"
    raise TypeError(type(node).__name__)


def pretty(node: PlanNode, indent: int = 0) -> str:
    """Indented, one node per line."""
    lines = ["  " * indent + _node_line(node)]
    for k in node.children():
        lines.append(pretty(k, indent + 1))
    return "\n".join(lines)


# --------------------------------------------------------------------------
# JSON round trip

_IR_CLASSES = {
    cls.__name__: cls
    for cls in (
        Column, Literal, Compare, IsTest, BoolOp, Not, Arith, Func, AggCall,
        Item, SortKey, Scan, Filter, Project, Join, Aggregate, Distinct, Sort, Limit, Union,
    )
}


def to_json(obj) -> Any:
    if dataclasses.is_dataclass(obj):
        out = {"@type": type(obj).__name__}
        for f in dataclasses.fields(obj):
            out[f.name] = to_json(getattr(obj, f.name))
        return out
    if isinstance(obj, (tuple, list)):
        return [to_json(x) for x in obj]
    return obj


def from_json(data) -> Any:
    if isinstance(data, dict) and "@type" in data:
        cls = _IR_CLASSES[data["@type"]]
        kwargs = {k: from_json(v) for k, v in data.items() if k != "@type"}
        return cls(**kwargs)
    if isinstance(data, list):
        return tuple(from_json(x) for x in data)
    return data
