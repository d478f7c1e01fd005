"""Exhaustive enumeration over threshold grids; an independent check of the MAX-SMT route."""
from __future__ import annotations

import itertools
import time
from typing import Sequence

import numpy as np

from ..rules import LearnedRule, RuleTemplate, VarBound
from ..trace import TraceStep
from .core import SynthesisResult, partition
from .tighten import STRICT_EPS, PairEvaluator, hard_interval, variable_classes

MAX_VARS = 4
MAX_STEPS = 400


class OracleBoundError(ValueError):
    pass


def candidate_grid(template: RuleTemplate, steps: Sequence[TraceStep], cls: Sequence[str],
                   eps: float = STRICT_EPS) -> np.ndarray:
    """Observed values, constants, 0, 1, their midpoints, and epsilon offsets for strict operators."""
    base = {0.0, 1.0}
    strict = False
    for v in cls:
        for lit in template.literals_of(v):
            base.update(float(s.belief[lit.prob_var]) for s in steps)
            strict |= lit.op in ("<", ">")
    for c in template.constraints:
        if isinstance(c, VarBound) and c.var in cls:
            base.add(float(c.value))
            strict |= c.op in ("<", ">")
    vals = np.array(sorted(base))
    extra = [(vals[:-1] + vals[1:]) / 2]
    if strict:
        extra += [vals - eps, vals + eps]
    grid = np.unique(np.concatenate([vals, *extra]))
    lo, hi = hard_interval(template, cls, eps)
    return grid[(grid >= lo) & (grid <= hi)]


def _class_sign(template: RuleTemplate, cls: Sequence[str]) -> float:
    """Goodness weight of one equality class (each member counts once)."""
    pol = template.polarity(cls[0])
    return {"lower": 1.0, "upper": -1.0}.get(pol, 0.0) * len(cls)


def oracle_synthesize(template: RuleTemplate, steps: Sequence[TraceStep]) -> SynthesisResult:
    steps = tuple(steps)
    if not steps:
        raise ValueError("synthesis needs at least one trace step")
    if len(template.free_vars) > MAX_VARS or len(steps) > MAX_STEPS:
        raise OracleBoundError(
            f"enumeration oracle supports at most {MAX_VARS} free variables and {MAX_STEPS} steps"
        )
    template.check_beliefs(steps[0].belief)
    start = time.perf_counter()
    ev = PairEvaluator(template, steps)
    classes = variable_classes(template)
    grids = [candidate_grid(template, steps, cls) for cls in classes]
    if any(len(g) == 0 for g in grids):
        from .backend import InfeasibleTemplateError
        raise InfeasibleTemplateError("hard constraints are unsatisfiable")

    signs = np.array([_class_sign(template, cls) for cls in classes], dtype=float)
    inner = grids[-1][:, None]
    best_key, best, partitions = None, None, set()
    for combo in itertools.product(*grids[:-1]):
        assignment = {v: float(x) for cls, x in zip(classes, combo) for v in cls}
        assignment.update({v: inner for v in classes[-1]})
        truth = ev.pair_truth(assignment)  # (rules, G, steps)
        costs = (~truth).sum(axis=(0, 2))
        outer_good = float(np.dot(signs[:-1], combo)) if len(combo) else 0.0
        goods = outer_good + signs[-1] * grids[-1]
        c_min = int(costs.min())
        if best_key is not None and c_min > best_key[0]:
            continue
        if best_key is None or c_min < best_key[0]:
            partitions = set()
        for g in np.flatnonzero(costs == c_min):
            partitions.add(tuple(np.flatnonzero(~truth[:, g, :].all(axis=0))))
        order = np.lexsort((-goods, costs))
        g = order[0]
        key = (c_min, -float(goods[g]))
        if best_key is None or key < best_key:
            best_key = key
            best = {v: float(x) for cls, x in zip(classes, combo) for v in cls}
            best.update({v: float(grids[-1][g]) for v in classes[-1]})

    truth, cost, unsat = partition(template, steps, best)
    return SynthesisResult(
        learned_rule=LearnedRule(template, best),
        cost=cost,
        unsatisfied=unsat,
        steps=steps,
        broken_pairs=~truth,
        solver_stats={
            "backend": "enumeration",
            "wall_time": time.perf_counter() - start,
            "unique_partition": len(partitions) == 1,
            "grid_sizes": [len(g) for g in grids],
        },
    )
