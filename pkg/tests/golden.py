"""Printed working examples of the eight catalogued rules: rule id -> (input, expected output)."""
from perfmut.ir import (
    DATETIME, FALSE, INTEGER, TRUE, Aggregate, Arith, Compare, Filter, Join, Limit, Literal, Sort, SortKey,
    cast, extract, lit,
)
from plans import col, t_scan


def ts(text):
    return Literal(text, DATETIME)


def t1():
    return t_scan("t1", ("c", INTEGER), ("c1", DATETIME))


def t2():
    return t_scan("t2", ("c", INTEGER), ("d", INTEGER))


def _rule0():
    c = col("t1", "c")
    cond = Compare("=", c, col("t2", "d"))
    return (Aggregate((c,), (), Join("INNER", t1(), t2(), cond)),
            Aggregate((c,), (), Join("INNER", Aggregate((c,), (), t1()), t2(), cond)))


def _rule13():
    c = col("t1", "c")
    pred = Compare(">", c, lit(0))
    return Filter(pred, Aggregate((c,), (), t1())), Aggregate((c,), (), Filter(pred, t1()))


def _rule15():
    c1 = col("t1", "c1", DATETIME)
    return (Filter(Compare("<", extract("YEAR", c1), lit(2021)), t1()),
            Filter(Compare("<", c1, ts("2021-01-01 00:00:00")), t1()))


def _rule16():
    pred = Compare("=", col("t1", "c"), lit(5))
    return Filter(pred, Join("INNER", t1(), t2(), TRUE)), Join("INNER", Filter(pred, t1()), t2(), TRUE)


def _rule51():
    empty = Filter(FALSE, t1())
    return Sort((SortKey(col("t1", "c")),), empty), empty


def _rule54():
    c = col("t1", "c")
    return (Filter(Compare("=", c, cast(Arith("/", lit(10), lit(2)), INTEGER)), t1()),
            Filter(Compare("=", c, lit(5)), t1()))


def _rule55():
    pk1, pk2 = col("t1", "c"), col("t2", "c")
    return (Join("INNER", t1(), t2(), Compare("=", cast(pk1, INTEGER), pk2)),
            Join("INNER", t1(), t2(), Compare("=", pk1, pk2)))


def _rule59():
    cond = Compare("=", col("t1", "c"), col("t2", "c"))
    return Limit(5, Join("LEFT", t1(), t2(), cond)), Limit(5, Join("LEFT", Limit(5, t1()), t2(), cond))


GOLDEN = {0: _rule0, 13: _rule13, 15: _rule15, 16: _rule16, 51: _rule51, 54: _rule54, 55: _rule55, 59: _rule59}
