"""Two-phase rule synthesis: minimum-cost MAX-SMT solve, then tightening."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from ..rules import LearnedRule, RuleTemplate
from ..trace import TraceStep
from .backend import BackendConfig, BackendError, run_backend
from .encode import SynthesisProblem, encode_smtlib
from .tighten import (
    STRICT_EPS,
    PairEvaluator,
    class_candidates,
    exact_pair_truth,
    tighten_thresholds,
    variable_classes,
)


@dataclass
class SynthesisResult:
    learned_rule: LearnedRule
    cost: int
    unsatisfied: list[int]
    steps: Sequence[TraceStep] = field(repr=False)
    broken_pairs: np.ndarray = field(repr=False, default=None)
    solver_stats: dict = field(default_factory=dict)

    @property
    def unsatisfied_steps(self) -> list[TraceStep]:
        return [self.steps[i] for i in self.unsatisfied]

    @property
    def total_steps(self) -> int:
        return len(self.steps)

    def summary(self) -> str:
        return f"fail to satisfy {len(self.unsatisfied)} steps out of {self.total_steps}"


def partition(template: RuleTemplate, steps: Sequence[TraceStep], assignment) -> tuple[np.ndarray, int, list[int]]:
    """Pair truth matrix, violated-pair count, and indices of failing steps."""
    truth = PairEvaluator(template, steps).pair_truth(assignment)
    return truth, int((~truth).sum()), [int(i) for i in np.flatnonzero(~truth.all(axis=0))]


def _snap(template, steps, pinned, assignment) -> dict[str, float]:
    """Move rational solver values onto floats that reproduce the exact pair truths."""
    ev = PairEvaluator(template, steps)
    current = dict(assignment)
    if np.array_equal(ev.pair_truth(current), pinned):
        return current
    for cls in variable_classes(template):
        x0 = current[cls[0]]
        cand = class_candidates(template, ev, cls)
        mids = (cand[:-1] + cand[1:]) / 2
        options = np.concatenate([cand, mids])
        for c in options[np.argsort(np.abs(options - x0), kind="stable")]:
            trial = dict(current)
            trial.update({v: float(c) for v in cls})
            if np.array_equal(ev.pair_truth(trial), pinned):
                return trial
    raise BackendError("solver assignment cannot be represented in floating point")


def synthesize(template: RuleTemplate, steps: Sequence[TraceStep],
               backend: BackendConfig | None = None, emit_smt: str | Path | None = None) -> SynthesisResult:
    steps = tuple(steps)
    problem = SynthesisProblem(template, steps)
    start = time.perf_counter()
    script = encode_smtlib(problem)
    if emit_smt is not None:
        Path(emit_smt).write_text(script)
    answer = run_backend(script, backend)
    exact = {v: answer.model.get(v, Fraction(0)) for v in template.free_vars}
    pinned = exact_pair_truth(template, steps, exact)
    cost = int((~pinned).sum())
    claimed = answer.objectives.get("cost")
    if claimed is not None and claimed.lstrip("-").isdigit() and int(claimed) != cost:
        raise BackendError(f"solver reports cost {claimed} but its model violates {cost} clauses",
                           answer.stdout, answer.stderr)
    start_point = _snap(template, steps, pinned, {v: float(x) for v, x in exact.items()})
    tight = tighten_thresholds(template, steps, pinned, start_point)
    learned = LearnedRule(template, tight)
    truth, check_cost, unsat = partition(template, steps, tight)
    if check_cost != cost or not np.array_equal(truth, pinned):
        raise AssertionError("tightening changed the satisfied/unsatisfied partition")
    return SynthesisResult(
        learned_rule=learned,
        cost=cost,
        unsatisfied=unsat,
        steps=steps,
        broken_pairs=~truth,
        solver_stats={
            "backend": answer.backend,
            "wall_time": time.perf_counter() - start,
            "solver_time": answer.wall_time,
            "objectives": answer.objectives,
            "solver_model": {k: str(v) for k, v in answer.model.items()},
            "stderr": answer.stderr,
            "strict_epsilon": STRICT_EPS,
        },
    )
