"""Uniform adapters over target DBMSs: execution with timeout, EXPLAIN, fixture loading."""
from __future__ import annotations

import logging
import os
import re
import sqlite3
import time
from dataclasses import dataclass
from typing import Optional

from .catalog import SchemaMetadata, canonical_value
from .ir import DATETIME, DOUBLE, INTEGER, STRING
from .render import EMBEDDED, POSTGRES, Dialect, ident

log = logging.getLogger(__name__)


class AdapterError(Exception):
    pass


class DBConnectionError(AdapterError, ConnectionError):
    pass


class QueryTimeout(AdapterError):
    pass


class SQLSyntaxError(AdapterError):
    pass


class ExecutionError(AdapterError):
    pass


class ResultTooLarge(ExecutionError):
    pass


class ExplainFailed(AdapterError):
    pass


class NonEmptyDatabase(AdapterError):
    pass


@dataclass(frozen=True)
class AdapterCapability:
    dbms: str
    version: str
    dialect: Dialect
    supports_cost_explain: bool
    timeout_mechanism: str  # "server-statement-timeout" | "client-cancel"


@dataclass(frozen=True)
class PlanFingerprint:
    cost: Optional[float]
    plan_text: str


@dataclass
class ExecResult:
    rows: list
    duration_ms: float
    mechanism: str = ""


@dataclass(frozen=True)
class RawColumn:
    name: str
    declared_type: str
    nullable: bool


@dataclass(frozen=True)
class RawTable:
    name: str
    columns: tuple
    primary_key: tuple = ()
    foreign_keys: tuple = ()
    unique: tuple = ()


class Adapter:
    """Base class.  One connection per instance; never shared across threads."""

    capability: AdapterCapability

    @property
    def dialect(self) -> Dialect:
        return self.capability.dialect

    def execute(self, sql: str, timeout_ms: Optional[float] = None, max_rows: Optional[int] = None) -> ExecResult:
        raise NotImplementedError

    def explain(self, sql: str) -> tuple:
        """Returns ``(PlanFingerprint, raw_text)``."""
        raise NotImplementedError

    def catalog(self) -> list:
        raise NotImplementedError

    def analyze(self) -> None:
        raise NotImplementedError

    def _create_and_insert(self, schema: SchemaMetadata, rows: dict) -> None:
        raise NotImplementedError

    def load_fixture(self, schema: SchemaMetadata, rows: dict, post_load: bool = True) -> None:
        if self.catalog():
            raise NonEmptyDatabase("target database already has user tables")
        self._create_and_insert(schema, rows)
        if post_load:
            self.analyze()

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _ddl(schema: SchemaMetadata, type_names: dict, inline_int_pk: bool) -> list:
    stmts = []
    # referenced tables first
    order = sorted(schema.tables, key=lambda t: (bool(t.foreign_keys), t.name))
    for t in order:
        parts = []
        for c in t.columns:
            decl = f"{ident(c.name)} {type_names[c.type]}"
            if inline_int_pk and t.primary_key == (c.name,) and c.type == INTEGER:
                decl += " PRIMARY KEY"
            elif not c.nullable:
                decl += " NOT NULL"
            parts.append(decl)
        if t.primary_key and not (inline_int_pk and len(t.primary_key) == 1
                                  and t.column(t.primary_key[0]).type == INTEGER):
            parts.append(f"PRIMARY KEY ({', '.join(map(ident, t.primary_key))})")
        for u in t.unique:
            parts.append(f"UNIQUE ({', '.join(map(ident, u))})")
        for col, ref_t, ref_c in t.foreign_keys:
            parts.append(f"FOREIGN KEY ({ident(col)}) REFERENCES {ident(ref_t)} ({ident(ref_c)})")
        stmts.append(f"CREATE TABLE {ident(t.name)} ({', '.join(parts)})")
    return stmts


# --------------------------------------------------------------------------
# embedded (sqlite)


class EmbeddedAdapter(Adapter):
    """SQLite engine, in-process.  Timeouts via client-side interrupt."""

    TYPE_NAMES = {INTEGER: "INTEGER", DOUBLE: "REAL", STRING: "TEXT", DATETIME: "TIMESTAMP"}

    def __init__(self, path: str = ":memory:"):
        try:
            self.conn = sqlite3.connect(path, isolation_level=None, check_same_thread=True)
        except sqlite3.Error as exc:
            raise DBConnectionError(str(exc)) from exc
        self.path = path
        self.analyze_calls = 0
        self.capability = AdapterCapability(
            dbms="sqlite",
            version=sqlite3.sqlite_version,
            dialect=EMBEDDED,
            supports_cost_explain=False,
            timeout_mechanism="client-cancel",
        )

    def _classify(self, exc: sqlite3.Error) -> AdapterError:
        msg = str(exc)
        if "syntax error" in msg or "no such column" in msg or "no such table" in msg:
            return SQLSyntaxError(msg)
        return ExecutionError(msg)

    def execute(self, sql, timeout_ms=None, max_rows=None) -> ExecResult:
        deadline = None
        if timeout_ms is not None:
            deadline = time.perf_counter() + timeout_ms / 1000.0
            self.conn.set_progress_handler(lambda: int(time.perf_counter() > deadline), 1000)
        start = time.perf_counter_ns()
        try:
            cur = self.conn.execute(sql)
            rows = []
            while True:
                chunk = cur.fetchmany(4096)
                if not chunk:
                    break
                rows.extend(chunk)
                if max_rows is not None and len(rows) > max_rows:
                    cur.close()
                    raise ResultTooLarge(f"more than {max_rows} rows")
        except sqlite3.OperationalError as exc:
            if "interrupted" in str(exc):
                raise QueryTimeout(f"exceeded {timeout_ms} ms") from exc
            raise self._classify(exc) from exc
        except sqlite3.Error as exc:
            raise self._classify(exc) from exc
        finally:
            if timeout_ms is not None:
                self.conn.set_progress_handler(None, 0)
        elapsed = (time.perf_counter_ns() - start) / 1e6
        return ExecResult(rows, elapsed, self.capability.timeout_mechanism)

    def explain(self, sql):
        try:
            rows = self.conn.execute(f"EXPLAIN QUERY PLAN {sql}").fetchall()
        except sqlite3.Error as exc:
            raise ExplainFailed(str(exc)) from exc
        depth = {0: -1}
        lines = []
        for node_id, parent, _, detail in rows:
            d = depth.get(parent, -1) + 1
            depth[node_id] = d
            lines.append("  " * d + detail)
        text = "\n".join(lines)
        if not text:
            raise ExplainFailed("empty plan")
        return PlanFingerprint(None, text), text

    def catalog(self) -> list:
        names = [r[0] for r in self.conn.execute(
            "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY name"
        )]
        out = []
        for name in names:
            info = self.conn.execute(f"PRAGMA table_info({ident(name)})").fetchall()
            cols = tuple(RawColumn(r[1], r[2], not r[3]) for r in info)
            pk = tuple(r[1] for r in sorted(info, key=lambda r: r[5]) if r[5])
            fks = tuple(
                (r[3], r[2], r[4]) for r in self.conn.execute(f"PRAGMA foreign_key_list({ident(name)})")
            )
            uniques = []
            for idx in self.conn.execute(f"PRAGMA index_list({ident(name)})").fetchall():
                if idx[2] and idx[3] == "u":
                    uniques.append(tuple(r[2] for r in self.conn.execute(f"PRAGMA index_info({ident(idx[1])})")))
            out.append(RawTable(name, cols, pk, fks, tuple(uniques)))
        return out

    def analyze(self) -> None:
        self.conn.execute("ANALYZE")
        self.analyze_calls += 1

    def _create_and_insert(self, schema, rows) -> None:
        self.conn.execute("BEGIN")
        try:
            for stmt in _ddl(schema, self.TYPE_NAMES, inline_int_pk=True):
                self.conn.execute(stmt)
            for t in schema.tables:
                marks = ", ".join("?" for _ in t.columns)
                self.conn.executemany(f"INSERT INTO {ident(t.name)} VALUES ({marks})", rows.get(t.name, []))
            self.conn.execute("COMMIT")
        except sqlite3.Error as exc:
            self.conn.execute("ROLLBACK")
            raise ExecutionError(str(exc)) from exc

    def close(self) -> None:
        self.conn.close()


# --------------------------------------------------------------------------
# postgres family

_COST = re.compile(r"\(cost=([0-9.]+)\.\.([0-9.]+)[^)]*\)")


def parse_pg_explain(lines: list) -> PlanFingerprint:
    """Top-node total cost plus plan text with the estimate groups stripped."""
    if not lines:
        raise ExplainFailed("empty EXPLAIN output")
    m = _COST.search(lines[0])
    if m is None:
        raise ExplainFailed(f"no cost on top plan node: {lines[0]!r}")
    normalized = "\n".join(_COST.sub("", line).rstrip() for line in lines)
    return PlanFingerprint(float(m.group(2)), normalized)


class PostgresAdapter(Adapter):
    """PostgreSQL-family server via psycopg.  Timeouts via ``statement_timeout``."""

    TYPE_NAMES = {INTEGER: "BIGINT", DOUBLE: "DOUBLE PRECISION", STRING: "TEXT", DATETIME: "TIMESTAMP"}

    def __init__(self, dsn: Optional[str] = None):
        try:
            import psycopg
        except ImportError as exc:  # pragma: no cover - optional dependency
            raise DBConnectionError("the postgres adapter needs the 'psycopg' package") from exc
        self._pg = psycopg
        dsn = dsn or os.environ.get("PERFMUT_DSN", "")
        try:
            self.conn = psycopg.connect(dsn, autocommit=True)
        except psycopg.OperationalError as exc:
            raise DBConnectionError(str(exc)) from exc
        self._timeout = None
        version = self.conn.execute("SHOW server_version").fetchone()[0]
        self.capability = AdapterCapability(
            dbms="postgres",
            version=version,
            dialect=POSTGRES,
            supports_cost_explain=True,
            timeout_mechanism="server-statement-timeout",
        )

    def _set_timeout(self, timeout_ms):
        value = 0 if timeout_ms is None else max(1, int(timeout_ms))
        if value != self._timeout:
            self.conn.execute(f"SET statement_timeout = {value}")
            self._timeout = value

    def execute(self, sql, timeout_ms=None, max_rows=None) -> ExecResult:
        errors = self._pg.errors
        self._set_timeout(timeout_ms)
        start = time.perf_counter_ns()
        try:
            cur = self.conn.execute(sql)
            rows = []
            while True:
                chunk = cur.fetchmany(4096)
                if not chunk:
                    break
                rows.extend(tuple(canonical_value(v) for v in r) for r in chunk)
                if max_rows is not None and len(rows) > max_rows:
                    raise ResultTooLarge(f"more than {max_rows} rows")
        except errors.QueryCanceled as exc:
            raise QueryTimeout(f"exceeded {timeout_ms} ms") from exc
        except errors.SyntaxErrorOrAccessRuleViolation as exc:
            raise SQLSyntaxError(str(exc)) from exc
        except self._pg.OperationalError as exc:
            raise DBConnectionError(str(exc)) from exc
        except self._pg.Error as exc:
            raise ExecutionError(str(exc)) from exc
        elapsed = (time.perf_counter_ns() - start) / 1e6
        return ExecResult(rows, elapsed, self.capability.timeout_mechanism)

    def explain(self, sql):
        try:
            lines = [r[0] for r in self.conn.execute(f"EXPLAIN {sql}").fetchall()]
        except self._pg.Error as exc:
            raise ExplainFailed(str(exc)) from exc
        return parse_pg_explain(lines), "\n".join(lines)

    def catalog(self) -> list:
        tables = [r[0] for r in self.conn.execute(
            "SELECT table_name FROM information_schema.tables "
            "WHERE table_schema = current_schema() AND table_type = 'BASE TABLE' ORDER BY table_name"
        )]
        out = []
        for name in tables:
            cols = tuple(
                RawColumn(r[0], r[1], r[2] == "YES")
                for r in self.conn.execute(
                    "SELECT column_name, data_type, is_nullable FROM information_schema.columns "
                    "WHERE table_schema = current_schema() AND table_name = %s ORDER BY ordinal_position",
                    (name,),
                )
            )
            constraints = self.conn.execute(
                "SELECT tc.constraint_name, tc.constraint_type, kcu.column_name, "
                "ccu.table_name, ccu.column_name "
                "FROM information_schema.table_constraints tc "
                "JOIN information_schema.key_column_usage kcu "
                "  ON tc.constraint_name = kcu.constraint_name AND tc.table_schema = kcu.table_schema "
                "LEFT JOIN information_schema.constraint_column_usage ccu "
                "  ON tc.constraint_type = 'FOREIGN KEY' AND tc.constraint_name = ccu.constraint_name "
                "WHERE tc.table_schema = current_schema() AND tc.table_name = %s "
                "ORDER BY tc.constraint_name, kcu.ordinal_position",
                (name,),
            ).fetchall()
            pk, fks, uniques = [], [], {}
            for cname, ctype, col, ref_t, ref_c in constraints:
                if ctype == "PRIMARY KEY":
                    pk.append(col)
                elif ctype == "FOREIGN KEY":
                    fks.append((col, ref_t, ref_c))
                elif ctype == "UNIQUE":
                    uniques.setdefault(cname, []).append(col)
            out.append(RawTable(name, cols, tuple(pk), tuple(fks), tuple(tuple(u) for u in uniques.values())))
        return out

    def analyze(self) -> None:
        self.conn.execute("ANALYZE")

    def _create_and_insert(self, schema, rows) -> None:
        with self.conn.transaction():
            for stmt in _ddl(schema, self.TYPE_NAMES, inline_int_pk=False):
                self.conn.execute(stmt)
            for t in schema.tables:
                cols = ", ".join(ident(c.name) for c in t.columns)
                with self.conn.cursor().copy(f"COPY {ident(t.name)} ({cols}) FROM STDIN") as cp:
                    for row in rows.get(t.name, []):
                        cp.write_row(row)

    def close(self) -> None:
        self.conn.close()


def make_adapter(dbms: str, dsn: Optional[str] = None) -> Adapter:
    if dbms == "embedded":
        return EmbeddedAdapter(dsn or ":memory:")
    if dbms == "postgres":
        return PostgresAdapter(dsn)
    raise ValueError(f"unknown dbms {dbms!r}")
