"""Random rule sequences over a base plan, producing deduplicated equivalent mutants."""
from __future__ import annotations

import logging
import random
from dataclasses import dataclass
from typing import Optional

from .ir import (
    Aggregate, Distinct, Filter, IsTest, Not, PlanNode, Project, Union,
    plan_equal, transform_all, transform_first, type_check,
)
from .rules import CATALOG, EXPRESSION, MutationRule

log = logging.getLogger(__name__)

DEFAULT_ATTEMPTS = 20


class RuleProducedInvalidPlan(AssertionError):
    pass


class NotPartitionable(ValueError):
    pass


@dataclass(frozen=True)
class QueryPair:
    base: PlanNode
    mutant: PlanNode
    applied_rules: tuple
    seed: Optional[int] = None


def apply_rule(plan: PlanNode, rule: MutationRule, schema=None) -> PlanNode:
    """Rewrite ``plan`` with ``rule``; unchanged when its condition matches nowhere."""
    fn = lambda node: rule.rewrite(node, schema)
    if rule.category == EXPRESSION:
        out, fired = transform_all(plan, fn)
    else:
        out, fired = transform_first(plan, fn)
    if not fired:
        return plan
    ok, diags = type_check(out, schema)
    if not ok:
        raise RuleProducedInvalidPlan(f"rule {rule.id}: {'; '.join(diags)}")
    return out


def mutate_tree(origin: PlanNode, rules, schema=None):
    """Apply ``rules`` in order.  Returns ``(mutant, fired_ids)`` or ``None`` if nothing changed."""
    plan = origin
    fired = []
    for rule in rules:
        out = apply_rule(plan, rule, schema)
        if out is not plan:
            fired.append(rule.id)
            plan = out
    if not fired or plan_equal(plan, origin):
        return None
    return plan, tuple(fired)


def mutate_query(base: PlanNode, schema=None, attempts: int = DEFAULT_ATTEMPTS,
                 rng: Optional[random.Random] = None, catalog=CATALOG, seed=None) -> list:
    """Run ``attempts`` shuffled-catalog trials and keep distinct mutants."""
    if attempts < 1:
        raise ValueError("attempts must be >= 1")
    rng = rng or random.Random()
    kept: list = []
    for _ in range(attempts):
        order = list(catalog)
        rng.shuffle(order)
        try:
            result = mutate_tree(base, order, schema)
        except RuleProducedInvalidPlan as exc:
            log.error("discarding mutant: %s", exc)
            continue
        if result is None:
            continue
        mutant, fired = result
        if any(plan_equal(mutant, k.mutant) for k in kept):
            continue
        kept.append(QueryPair(base, mutant, fired, seed))
    return kept


def _tlp_parts(base: PlanNode):
    wrappers = []
    node = base
    while isinstance(node, (Distinct, Project, Aggregate)):
        if isinstance(node, Aggregate) and node.aggs:
            raise NotPartitionable("aggregate functions above the filter")
        wrappers.append(node)
        node = node.child
    if not isinstance(node, Filter):
        raise NotPartitionable(f"no partitionable filter (found {type(node).__name__})")
    return wrappers, node


def tlp_mutate(base: PlanNode) -> PlanNode:
    """Partition ``base``'s top filter predicate into its TRUE / FALSE / NULL branches.

    The union of the branches equals ``base`` with that filter removed; see
    ``tlp_pair`` for the equivalent comparison partner.
    """
    wrappers, node = _tlp_parts(base)
    set_semantics = any(isinstance(w, (Distinct, Aggregate)) for w in wrappers)
    phi = node.predicate

    def branch(pred):
        out = Filter(pred, node.child)
        for w in reversed(wrappers):
            if not isinstance(w, Distinct):
                out = w.with_children(out)
        return out

    parts = [branch(phi), branch(Not(phi)), branch(IsTest("NULL", phi))]
    return Union(not set_semantics, Union(not set_semantics, parts[0], parts[1]), parts[2])


def tlp_pair(base: PlanNode) -> tuple:
    """``(unfiltered, partitioned)``: an equivalent pair built around ``base``'s top filter."""
    wrappers, node = _tlp_parts(base)
    unfiltered = node.child
    for w in reversed(wrappers):
        unfiltered = w.with_children(unfiltered)
    return unfiltered, tlp_mutate(base)
