"""Vectorized rule evaluation and directional threshold tightening."""
from __future__ import annotations

import warnings
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from ..rules import RuleTemplate, VarBound
from ..trace import TraceStep

STRICT_EPS = 1e-6

_CMP = {
    "<": np.less,
    ">": np.greater,
    "<=": np.less_equal,
    ">=": np.greater_equal,
}


class PairEvaluator:
    """Truth of every (action rule, step) biconditional under an assignment."""

    def __init__(self, template: RuleTemplate, steps: Sequence[TraceStep]):
        self.template = template
        self.n_steps = len(steps)
        actions = np.array([s.action for s in steps])
        self.matches = [actions == r.action for r in template.rules]
        names = template.prob_vars
        self.p = {name: np.array([s.belief[name] for s in steps], dtype=float) for name in names}

    def bodies(self, assignment: Mapping[str, float]) -> np.ndarray:
        """Body truth, shape ``(rules, *batch, steps)``.

        Assignment values may be arrays of shape ``(*batch, 1)`` to evaluate a
        batch of candidate assignments at once.
        """
        rules = []
        for rule in self.template.rules:
            body = np.zeros(self.n_steps, dtype=bool)
            for sub in rule.body:
                acc = np.ones(self.n_steps, dtype=bool)
                for lit in sub.literals:
                    x = assignment[lit.rhs] if isinstance(lit.rhs, str) else lit.rhs
                    acc = acc & _CMP[lit.op](self.p[lit.prob_var], x)
                body = body | acc
            rules.append(body)
        return np.stack(np.broadcast_arrays(*rules))

    def pair_truth(self, assignment: Mapping[str, float]) -> np.ndarray:
        bodies = self.bodies(assignment)
        matches = np.array(self.matches).reshape(len(self.matches), *([1] * (bodies.ndim - 2)), -1)
        return bodies == matches


def exact_pair_truth(template: RuleTemplate, steps: Sequence[TraceStep],
                     assignment: Mapping[str, Fraction]) -> np.ndarray:
    """Like :meth:`PairEvaluator.pair_truth` but in exact rational arithmetic."""
    ops = {"<": lambda a, b: a < b, ">": lambda a, b: a > b,
           "<=": lambda a, b: a <= b, ">=": lambda a, b: a >= b}
    cache: dict[float, Fraction] = {}

    def q(x: float) -> Fraction:
        if x not in cache:
            cache[x] = Fraction(x)
        return cache[x]

    out = np.zeros((len(template.rules), len(steps)), dtype=bool)
    for t, step in enumerate(steps):
        for i, rule in enumerate(template.rules):
            body = any(
                all(
                    ops[lit.op](q(step.belief[lit.prob_var]),
                                assignment[lit.rhs] if isinstance(lit.rhs, str) else q(lit.rhs))
                    for lit in sub.literals
                )
                for sub in rule.body
            )
            out[i, t] = body == (step.action == rule.action)
    return out


def variable_classes(template: RuleTemplate) -> list[list[str]]:
    seen: set[str] = set()
    classes = []
    for v in template.free_vars:
        if v not in seen:
            cls = template.equality_class(v)
            seen.update(cls)
            classes.append(cls)
    return classes


def hard_interval(template: RuleTemplate, cls: Sequence[str], eps: float = STRICT_EPS) -> tuple[float, float]:
    """Closed interval allowed by the var-bound constraints on a class."""
    lo, hi = 0.0, 1.0
    for c in template.constraints:
        if isinstance(c, VarBound) and c.var in cls:
            if c.op in (">", ">="):
                lo = max(lo, c.value + (eps if c.op == ">" else 0.0))
            elif c.op in ("<", "<="):
                hi = min(hi, c.value - (eps if c.op == "<" else 0.0))
            else:
                lo, hi = max(lo, c.value), min(hi, c.value)
    return lo, hi


def class_candidates(template: RuleTemplate, evaluator: PairEvaluator, cls: Sequence[str],
                     eps: float = STRICT_EPS) -> np.ndarray:
    """Every value at which some literal of the class can change truth."""
    vals = []
    for v in cls:
        for lit in template.literals_of(v):
            p = evaluator.p[lit.prob_var]
            if lit.op == ">":
                vals.append(p - eps)
            elif lit.op == "<":
                vals.append(p + eps)
            else:
                vals.append(p)
    lo, hi = hard_interval(template, cls, eps)
    cand = np.concatenate(vals + [np.array([lo, hi])]) if vals else np.array([lo, hi])
    cand = np.unique(cand)
    return cand[(cand >= lo) & (cand <= hi)]


def tighten_thresholds(template: RuleTemplate, steps: Sequence[TraceStep],
                       pinned: np.ndarray, assignment: Mapping[str, float],
                       eps: float = STRICT_EPS) -> dict[str, float]:
    """Push each single-polarity threshold as far as the pinned pair truths allow.

    Lower-bound thresholds (``p >= x``) go up, upper-bound thresholds go down.
    ``pinned`` is the (rule, step) truth matrix that must be preserved.
    """
    ev = PairEvaluator(template, steps)
    pinned = np.asarray(pinned, dtype=bool)
    current = {v: float(assignment[v]) for v in template.free_vars}
    classes = variable_classes(template)

    def feasible(trial) -> bool:
        return bool(np.array_equal(ev.pair_truth(trial), pinned))

    for cls in classes:
        if template.polarity(cls[0]) is None:
            lo, hi = hard_interval(template, cls, eps)
            for v in cls:
                current[v] = lo if lo > 0.0 else hi if hi < 1.0 else 0.0
        elif template.polarity(cls[0]) == "mixed":
            warnings.warn(
                f"threshold(s) {cls} occur with both polarities; keeping the solver's value",
                stacklevel=2,
            )

    changed = True
    while changed:
        changed = False
        for cls in classes:
            pol = template.polarity(cls[0])
            if pol not in ("lower", "upper"):
                continue
            cand = class_candidates(template, ev, cls, eps)
            x0 = current[cls[0]]
            # lower thresholds rise and upper thresholds sink
            side = cand[cand > x0] if pol == "lower" else cand[cand < x0][::-1]
            best = x0
            # feasibility is an interval containing x0: bisect on the ordered side
            lo_i, hi_i = 0, len(side)
            while lo_i < hi_i:
                mid = (lo_i + hi_i) // 2
                trial = dict(current)
                trial.update({v: float(side[mid]) for v in cls})
                if feasible(trial):
                    best = float(side[mid])
                    lo_i = mid + 1
                else:
                    hi_i = mid
            if best != x0:
                current.update({v: best for v in cls})
                changed = True
    return current
