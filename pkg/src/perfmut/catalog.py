"""Schema metadata, live value sampling, and the SCOTT-style benchmark fixture."""
from __future__ import annotations

import csv
import datetime as dt
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .ir import COLUMN_TYPES, DATETIME, DOUBLE, INTEGER, STRING, Scan
from .render import ident

log = logging.getLogger(__name__)

# emp rows per unit of scale; calibrated so scale 1.0 is ~30 MB of raw values
EMP_ROWS_PER_SCALE = 400_000
DEFAULT_SAMPLE_SIZE = 50


class UnsupportedType(Warning):
    pass


@dataclass(frozen=True)
class ColumnMeta:
    name: str
    type: str
    nullable: bool = True


@dataclass(frozen=True)
class TableMeta:
    name: str
    columns: tuple
    primary_key: tuple = ()
    foreign_keys: tuple = ()  # ((column, ref_table, ref_column), ...)
    unique: tuple = ()  # extra unique, non-null column sets

    def column(self, name: str) -> Optional[ColumnMeta]:
        for c in self.columns:
            if c.name == name:
                return c
        return None

    def unique_sets(self) -> list:
        sets = [frozenset(self.primary_key)] if self.primary_key else []
        sets.extend(frozenset(u) for u in self.unique)
        return sets


@dataclass(frozen=True)
class SchemaMetadata:
    tables: tuple
    diagnostics: tuple = field(default=(), compare=False)

    def table(self, name: str) -> Optional[TableMeta]:
        for t in self.tables:
            if t.name == name:
                return t
        return None

    def problems(self) -> list:
        out = []
        for t in self.tables:
            for c in t.columns:
                if c.type not in COLUMN_TYPES:
                    out.append(f"{t.name}.{c.name}: unsupported type {c.type}")
            for col, ref_t, ref_c in t.foreign_keys:
                ref = self.table(ref_t)
                if t.column(col) is None:
                    out.append(f"{t.name}: foreign key on missing column {col}")
                if ref is None or ref.column(ref_c) is None:
                    out.append(f"{t.name}.{col}: references missing {ref_t}.{ref_c}")
        return out

    def scan(self, table: str, alias: Optional[str] = None) -> Scan:
        """Bind a Scan with the table's full column list (star expansion)."""
        meta = self.table(table)
        if meta is None:
            raise KeyError(table)
        return Scan(table, alias or table, tuple((c.name, c.type) for c in meta.columns))


_TYPE_WORDS = [
    (("INT",), INTEGER),
    (("REAL", "FLOA", "DOUB", "NUMERIC", "DECIMAL"), DOUBLE),
    (("TIMESTAMP", "DATETIME", "DATE"), DATETIME),
    (("CHAR", "TEXT", "CLOB", "STRING"), STRING),
]


def map_type(declared: str) -> Optional[str]:
    decl = (declared or "").upper()
    if decl.startswith("TIME") and not decl.startswith("TIMESTAMP"):
        return None
    for words, t in _TYPE_WORDS:
        if any(w in decl for w in words):
            return t
    return None


def retrieve_metadata(adapter) -> SchemaMetadata:
    """Read every user table's columns and keys through ``adapter``.

    Columns of unsupported types are dropped with a diagnostic.
    """
    tables = []
    diags = []
    for raw in adapter.catalog():
        cols = []
        for c in raw.columns:
            t = map_type(c.declared_type)
            if t is None:
                msg = f"{raw.name}.{c.name}: unsupported type {c.declared_type!r}, column excluded"
                log.warning(msg)
                diags.append(msg)
                continue
            cols.append(ColumnMeta(c.name, t, c.nullable and c.name not in raw.primary_key))
        names = {c.name for c in cols}
        tables.append(TableMeta(
            name=raw.name,
            columns=tuple(cols),
            primary_key=tuple(c for c in raw.primary_key if c in names),
            foreign_keys=tuple(fk for fk in raw.foreign_keys if fk[0] in names),
            unique=tuple(u for u in raw.unique if set(u) <= names),
        ))
    tables.sort(key=lambda t: t.name)
    return SchemaMetadata(tuple(tables), tuple(diags))


# --------------------------------------------------------------------------
# value sampling


@dataclass(frozen=True)
class ColumnSample:
    values: tuple
    min: object = None
    max: object = None


@dataclass(frozen=True)
class ValueSample:
    columns: dict  # (table, column) -> ColumnSample

    def get(self, table: str, column: str) -> ColumnSample:
        return self.columns.get((table, column), ColumnSample(()))


def canonical_value(v):
    if isinstance(v, dt.datetime):
        return v.strftime("%Y-%m-%d %H:%M:%S")
    if isinstance(v, dt.date):
        return v.strftime("%Y-%m-%d 00:00:00")
    if type(v).__name__ == "Decimal":
        return float(v)
    return v


def sample_values(adapter, schema: SchemaMetadata, k: int = DEFAULT_SAMPLE_SIZE, seed: int = 0) -> ValueSample:
    """Uniformly sample up to ``k`` non-null values per column from live data."""
    out = {}
    for t in schema.tables:
        for c in t.columns:
            col = ident(c.name)
            sql = f"SELECT {col} FROM {ident(t.name)} WHERE {col} IS NOT NULL ORDER BY {col}"
            values = [canonical_value(r[0]) for r in adapter.execute(sql).rows]
            if not values:
                out[(t.name, c.name)] = ColumnSample(())
                continue
            rng = random.Random(f"{seed}:{t.name}.{c.name}")
            picked = tuple(rng.sample(values, min(k, len(values))))
            out[(t.name, c.name)] = ColumnSample(picked, values[0], values[-1])
    return ValueSample(out)


# --------------------------------------------------------------------------
# SCOTT-style fixture


@dataclass(frozen=True)
class FixtureSpec:
    scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.scale < 0:
            raise ValueError("scale must be non-negative")


@dataclass
class FixtureData:
    spec: FixtureSpec
    schema: SchemaMetadata
    rows: dict  # table -> list of tuples, in schema column order

    def row_counts(self) -> dict:
        return {t: len(r) for t, r in self.rows.items()}

    def raw_bytes(self) -> int:
        """Raw data volume: 8 bytes per number, UTF-8 length per string, 0 per NULL."""
        total = 0
        for rows in self.rows.values():
            for row in rows:
                for v in row:
                    if v is None:
                        continue
                    if isinstance(v, str):
                        total += len(v.encode())
                    else:
                        total += 8
        return total


SCOTT_SCHEMA = SchemaMetadata((
    TableMeta(
        "bonus",
        (ColumnMeta("ename", STRING), ColumnMeta("job", STRING), ColumnMeta("sal", INTEGER)),
    ),
    TableMeta(
        "dept",
        (ColumnMeta("deptno", INTEGER, False), ColumnMeta("name", STRING)),
        primary_key=("deptno",),
    ),
    TableMeta(
        "emp",
        (
            ColumnMeta("empno", INTEGER, False),
            ColumnMeta("emp_pk", INTEGER, False),
            ColumnMeta("ename", STRING),
            ColumnMeta("job", STRING),
            ColumnMeta("sal", INTEGER),
            ColumnMeta("comm", DOUBLE),
            ColumnMeta("hiredate", DATETIME),
            ColumnMeta("deptno", INTEGER),
        ),
        primary_key=("empno",),
        foreign_keys=(("deptno", "dept", "deptno"),),
        unique=(("emp_pk",),),
    ),
))

DEPT_NAMES = ["ACCT", "RESEARCH", "SALES", "OPERATIONS"]
JOBS = ["CLERK", "SALESMAN", "MANAGER", "ANALYST", "Technical", "ENGINEER", "SUPPORT", "PRESIDENT", "INTERN"]
JOB_WEIGHTS = [30, 25, 12, 10, 8, 8, 5, 1, 1]
_SYLLABLES = ["SMI", "TH", "AL", "LEN", "WARD", "JO", "NES", "MAR", "TIN", "BLA", "KE", "CLA",
              "RK", "SCO", "TT", "KING", "TUR", "NER", "ADA", "MS", "FO", "RD", "MIL", "LER"]
_EPOCH = dt.datetime(1980, 1, 1)
_SPAN_SECONDS = int((dt.datetime(2023, 12, 31) - _EPOCH).total_seconds())


def _name(rng: random.Random) -> str:
    return "".join(rng.choice(_SYLLABLES) for _ in range(rng.randint(2, 3)))


def build_fixture_rows(spec: FixtureSpec) -> FixtureData:
    """Pseudorandom, referentially consistent SCOTT rows; pure function of ``spec``."""
    rng = random.Random(spec.seed)
    n_emp = round(spec.scale * EMP_ROWS_PER_SCALE)
    n_dept = max(4, round(spec.scale * 100)) if n_emp else 0
    n_bonus = n_emp // 10

    dept = []
    for i in range(n_dept):
        deptno = 10 * (i + 1)
        dept.append((deptno, DEPT_NAMES[i] if i < len(DEPT_NAMES) else f"DEPT{deptno}"))
    deptnos = [d[0] for d in dept]

    empnos = rng.sample(range(1, 10 * n_emp + 1), n_emp) if n_emp else []
    emp = []
    for empno in empnos:
        ename = None if rng.random() < 0.02 else _name(rng)
        job = rng.choices(JOBS, JOB_WEIGHTS)[0]
        sal = rng.randint(500, 200_000)
        comm = None if rng.random() < 0.3 else round(rng.uniform(0, 5000), 2)
        if rng.random() < 0.03:
            hired = None
        else:
            hired = (_EPOCH + dt.timedelta(seconds=rng.randrange(_SPAN_SECONDS))).strftime("%Y-%m-%d %H:%M:%S")
        emp.append((empno, empno, ename, job, sal, comm, hired, rng.choice(deptnos)))

    bonus = []
    for _ in range(n_bonus):
        src = emp[rng.randrange(n_emp)]
        bonus.append((src[2], src[3], rng.randint(0, 20_000)))

    return FixtureData(spec, SCOTT_SCHEMA, {"bonus": bonus, "dept": dept, "emp": emp})


def generate_fixture(adapter, spec: FixtureSpec) -> FixtureData:
    """Create and populate the fixture through ``adapter`` (database must be empty)."""
    data = build_fixture_rows(spec)
    adapter.load_fixture(data.schema, data.rows)
    return data


def dump_fixture_csv(data: FixtureData, directory) -> list:
    """One RFC-4180 CSV per table with a header row.  Returns the written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in data.schema.tables:
        path = directory / f"{t.name}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([c.name for c in t.columns])
            w.writerows(data.rows[t.name])
        paths.append(path)
    return paths
