"""Dialect-aware rendering of logical plans to SQL text.

Operators are folded into SELECT blocks following SQL's clause order
(FROM, WHERE, GROUP BY, HAVING, SELECT, DISTINCT, ORDER BY, LIMIT).  When an
operator cannot be expressed inside the current block it is closed off as a
derived table whose columns are renamed ``c0, c1, ...``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Optional

from .ir import (
    BOOLEAN, DATETIME, DOUBLE, INTEGER, STRING,
    AggCall, Aggregate, Arith, BoolOp, Column, Compare, Distinct, Expr, Filter, Func,
    IsTest, Join, Limit, Literal, Not, PlanNode, Project, Scan, Sort, Union, output_columns,
)


class UnsupportedConstruct(Exception):
    """A node or expression has no rendering in the requested dialect."""


@dataclass(frozen=True)
class Dialect:
    name: str
    explain_prefix: str
    timestamp_keyword: bool
    native_distinct_from: bool

    def type_name(self, type_: str, length: Optional[int] = None) -> str:
        if type_ == STRING:
            return f"VARCHAR({length})" if length else "TEXT"
        if self.name == "postgres":
            return {INTEGER: "BIGINT", DOUBLE: "DOUBLE PRECISION",
                    DATETIME: "TIMESTAMP", BOOLEAN: "BOOLEAN"}[type_]
        return {INTEGER: "INTEGER", DOUBLE: "REAL", DATETIME: "TEXT", BOOLEAN: "BOOLEAN"}[type_]

    def explain(self, sql: str) -> str:
        return f"{self.explain_prefix} {sql}"


EMBEDDED = Dialect("embedded", "EXPLAIN QUERY PLAN", timestamp_keyword=False, native_distinct_from=False)
POSTGRES = Dialect("postgres", "EXPLAIN", timestamp_keyword=True, native_distinct_from=True)
DIALECTS = {"embedded": EMBEDDED, "postgres": POSTGRES}

_PLAIN_IDENT = re.compile(r"^[a-z_][a-z0-9_]*$")
_RESERVED = {
    "select", "from", "where", "group", "order", "by", "limit", "join", "on", "union",
    "all", "distinct", "and", "or", "not", "null", "true", "false", "as", "is", "like",
    "left", "inner", "cross", "having", "case", "when", "user", "table", "end",
}
_STRFTIME = {"YEAR": "%Y", "MONTH": "%m", "DAY": "%d"}


def ident(name: str) -> str:
    if _PLAIN_IDENT.match(name) and name not in _RESERVED:
        return name
    return '"' + name.replace('"', '""') + '"'


def quoted(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


@dataclass
class _Ref:
    """Reference to a column exposed by a FROM source."""

    source: str
    column: str


@dataclass
class _Block:
    from_sql: str
    n_sources: int
    env: dict  # key -> _Ref | str
    stage: int = 0  # 0 from, 1 where, 2 group, 3 having, 4 select, 5 distinct, 6 order, 7 limit
    where: list = field(default_factory=list)
    grouped: bool = False
    group_by: list = field(default_factory=list)
    having: list = field(default_factory=list)
    select: Optional[list] = None  # [(sql, alias-or-None)]
    distinct: bool = False
    order_by: list = field(default_factory=list)
    limit: Optional[int] = None
    compound: Optional[list] = None  # [(op, block, node)]


class _Renderer:
    def __init__(self, dialect: Dialect):
        self.d = dialect
        self.counter = 0

    # -- expressions ---------------------------------------------------------

    def ref_sql(self, block: _Block, value) -> str:
        if isinstance(value, _Ref):
            if block.n_sources == 1:
                return ident(value.column)
            return f"{ident(value.source)}.{ident(value.column)}"
        return value

    def literal(self, e: Literal) -> str:
        if e.value is None:
            return f"CAST(NULL AS {self.d.type_name(e.type)})"
        if e.type == BOOLEAN:
            return "TRUE" if e.value else "FALSE"
        if e.type == INTEGER:
            v = int(e.value)
            return f"({v})" if v < 0 else str(v)
        if e.type == DOUBLE:
            v = float(e.value)
            if not math.isfinite(v):
                raise UnsupportedConstruct(f"non-finite double literal {v}")
            text = repr(v)
            return f"({text})" if v < 0 else text
        if e.type == STRING:
            return "'" + str(e.value).replace("'", "''") + "'"
        if e.type == DATETIME:
            text = "'" + str(e.value) + "'"
            return f"TIMESTAMP {text}" if self.d.timestamp_keyword else text
        raise UnsupportedConstruct(f"literal of type {e.type}")

    def paren(self, e: Expr, block: _Block) -> str:
        text = self.expr(e, block)
        if isinstance(e, (Compare, BoolOp, Arith, IsTest, Not)):
            return f"({text})"
        return text

    def expr(self, e: Expr, block: _Block) -> str:
        if isinstance(e, Column):
            if e.key not in block.env:
                raise UnsupportedConstruct(f"unresolved column {e.table}.{e.name}")
            return self.ref_sql(block, block.env[e.key])
        if isinstance(e, Literal):
            return self.literal(e)
        if isinstance(e, Compare):
            op = e.op
            if op in ("IS DISTINCT FROM", "IS NOT DISTINCT FROM") and not self.d.native_distinct_from:
                op = "IS NOT" if op == "IS DISTINCT FROM" else "IS"
            return f"{self.paren(e.left, block)} {op} {self.paren(e.right, block)}"
        if isinstance(e, IsTest):
            return f"{self.paren(e.operand, block)} IS {e.test}"
        if isinstance(e, BoolOp):
            return f" {e.op} ".join(self.paren(a, block) for a in e.args)
        if isinstance(e, Not):
            return f"NOT ({self.expr(e.arg, block)})"
        if isinstance(e, Arith):
            return f"{self.paren(e.left, block)} {e.op} {self.paren(e.right, block)}"
        if isinstance(e, Func):
            return self.func(e, block)
        if isinstance(e, AggCall):
            arg = "*" if e.arg is None else self.expr(e.arg, block)
            text = f"{e.name}({arg})"
            if e.name == "AVG" and self.d.name == "postgres":
                text = f"CAST({text} AS DOUBLE PRECISION)"
            return text
        raise UnsupportedConstruct(f"expression {type(e).__name__}")

    def func(self, e: Func, block: _Block) -> str:
        arg = self.expr(e.args[0], block)
        if e.name == "EXTRACT":
            if e.param not in _STRFTIME:
                raise UnsupportedConstruct(f"EXTRACT field {e.param}")
            if self.d.name == "postgres":
                return f"CAST(EXTRACT({e.param} FROM {arg}) AS BIGINT)"
            return f"CAST(strftime('{_STRFTIME[e.param]}', {arg}) AS INTEGER)"
        if e.name == "CAST":
            return f"CAST({arg} AS {self.d.type_name(e.type, e.param)})"
        if e.name in ("ABS", "LOWER", "UPPER", "LENGTH"):
            return f"{e.name}({arg})"
        raise UnsupportedConstruct(f"function {e.name}")

    # -- blocks --------------------------------------------------------------

    def select_list(self, block: _Block, columns, wrap: bool) -> list:
        if block.select is not None:
            items = block.select
        else:
            items = []
            for c in columns:
                value = block.env[c.key]
                plain = value.column if isinstance(value, _Ref) else None
                items.append((self.ref_sql(block, value), plain, c.name))
        out = []
        for i, (sql, plain, name) in enumerate(items):
            if wrap:
                out.append(f"{sql} AS c{i}")
            elif plain == name:
                out.append(sql)
            else:
                out.append(f"{sql} AS {quoted(name)}")
        return out

    def block_sql(self, block: _Block, columns, wrap: bool = False) -> str:
        if block.compound is not None:
            return " ".join(
                (f"{op} " if op else "") + self.block_sql(b, output_columns(n), wrap)
                for op, b, n in block.compound
            )
        parts = ["SELECT"]
        if block.distinct:
            parts.append("DISTINCT")
        parts.append(", ".join(self.select_list(block, columns, wrap)))
        parts.append("FROM " + block.from_sql)
        if block.where:
            parts.append("WHERE " + " AND ".join(block.where))
        if block.group_by:
            parts.append("GROUP BY " + ", ".join(block.group_by))
        if block.having:
            parts.append("HAVING " + " AND ".join(block.having))
        if block.order_by:
            parts.append("ORDER BY " + ", ".join(block.order_by))
        if block.limit is not None:
            parts.append(f"LIMIT {block.limit}")
        return " ".join(parts)

    def fresh(self) -> str:
        name = f"s{self.counter}"
        self.counter += 1
        return name

    def wrap(self, block: _Block, node: PlanNode) -> _Block:
        """Close ``block`` into a derived table exposing columns c0, c1, ..."""
        columns = output_columns(node)
        inner = self.block_sql(block, columns, wrap=True)
        alias = self.fresh()
        env = {c.key: _Ref(alias, f"c{i}") for i, c in enumerate(columns)}
        return _Block(from_sql=f"({inner}) AS {alias}", n_sources=1, env=env)

    def as_source(self, block: _Block, node: PlanNode, allow_multi: bool) -> _Block:
        if block.compound is None and block.stage == 0 and (allow_multi or block.n_sources == 1):
            return block
        return self.wrap(block, node)

    def member(self, block: _Block, node: PlanNode) -> _Block:
        if block.compound is not None or block.order_by or block.limit is not None:
            return self.wrap(block, node)
        return block

    def render(self, node: PlanNode) -> _Block:
        if isinstance(node, Scan):
            alias = node.alias
            from_sql = ident(node.table) if alias == node.table else f"{ident(node.table)} AS {ident(alias)}"
            env = {(alias, n): _Ref(alias, n) for n, _ in node.columns}
            return _Block(from_sql=from_sql, n_sources=1, env=env)

        if isinstance(node, Join):
            left = self.as_source(self.render(node.left), node.left, allow_multi=True)
            right = self.as_source(self.render(node.right), node.right, allow_multi=False)
            env = dict(left.env)
            env.update(right.env)
            block = _Block(from_sql="", n_sources=left.n_sources + right.n_sources, env=env)
            if node.kind == "CROSS":
                block.from_sql = f"{left.from_sql} CROSS JOIN {right.from_sql}"
            else:
                cond = self.expr(node.condition, block) if node.condition is not None else "TRUE"
                block.from_sql = f"{left.from_sql} {node.kind} JOIN {right.from_sql} ON {cond}"
            return block

        if isinstance(node, Union):
            left = self.render(node.left)
            if left.compound is not None:
                members = list(left.compound)
            else:
                members = [(None, self.member(left, node.left), node.left)]
            right = self.member(self.render(node.right), node.right)
            members.append(("UNION ALL" if node.all else "UNION", right, node.right))
            return _Block(from_sql="", n_sources=0, env={}, stage=7, compound=members)

        block = self.render(node.child)

        if isinstance(node, Filter):
            if block.compound is None and block.stage <= 1:
                block.where.append(self.cond(node.predicate, block))
            elif block.compound is None and block.grouped and block.stage <= 3:
                block.having.append(self.cond(node.predicate, block))
                block.stage = 3
                return block
            else:
                block = self.wrap(block, node.child)
                block.where.append(self.cond(node.predicate, block))
            block.stage = 1
            return block

        if isinstance(node, Aggregate):
            if block.compound is not None or block.stage > 1:
                block = self.wrap(block, node.child)
            block.grouped = True
            block.group_by = [self.expr(k, block) for k in node.keys]
            env = {k.key: block.env[k.key] for k in node.keys}
            for a in node.aggs:
                env[a.key] = self.expr(a.expr, block)
            block.env = env
            block.stage = 2
            return block

        if isinstance(node, Project):
            if block.compound is not None or block.stage > 3:
                block = self.wrap(block, node.child)
            select = []
            env = {}
            for it in node.items:
                sql = self.expr(it.expr, block)
                plain = None
                if isinstance(it.expr, Column):
                    value = block.env[it.expr.key]
                    plain = value.column if isinstance(value, _Ref) else None
                    env[it.key] = value
                else:
                    env[it.key] = sql
                select.append((sql, plain, it.name))
            block.select = select
            block.env = env
            block.stage = 4
            return block

        if isinstance(node, Distinct):
            if block.compound is not None or block.stage > 4:
                block = self.wrap(block, node.child)
            block.distinct = True
            block.stage = 5
            return block

        if isinstance(node, Sort):
            if block.compound is not None or block.stage > 5:
                block = self.wrap(block, node.child)
            block.order_by = [
                self.expr(k.expr, block) + ("" if k.ascending else " DESC") for k in node.keys
            ]
            block.stage = 6
            return block

        if isinstance(node, Limit):
            if block.compound is not None or block.stage > 6:
                block = self.wrap(block, node.child)
            block.limit = node.count
            block.stage = 7
            return block

        raise UnsupportedConstruct(f"plan node {type(node).__name__}")

    def cond(self, e: Expr, block: _Block) -> str:
        # WHERE/HAVING entries are AND-joined, so bare OR terms need parentheses
        text = self.expr(e, block)
        if isinstance(e, BoolOp) and e.op == "OR":
            return f"({text})"
        return text


def render_sql(plan: PlanNode, dialect: Dialect = EMBEDDED) -> str:
    """Render ``plan`` as executable SQL text for ``dialect``.

    Pure function of its inputs.  Raises UnsupportedConstruct when some node or
    expression has no rendering.
    """
    r = _Renderer(dialect)
    block = r.render(plan)
    return r.block_sql(block, output_columns(plan))
