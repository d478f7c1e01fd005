"""Grade rule violations by their Hellinger distance to the rule-consistent belief region."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .models.base import ContractError
from .rules import LearnedRule, describe
from .trace import TraceStep

_SQRT2 = math.sqrt(2.0)
DIST_TOL = 1e-6
MAX_PROPOSALS = 10**6
MIN_ACCEPTANCE = 1e-4
_BATCH = 50_000


class UnsatRegionError(ValueError):
    """The rule region has (numerically) zero volume on the simplex."""


def _as_distribution(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ContractError(f"{name} must be a non-empty 1-d distribution")
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise ContractError(f"{name} has negative or non-finite entries")
    if abs(arr.sum() - 1.0) > DIST_TOL:
        raise ContractError(f"{name} sums to {arr.sum():.9g}, not 1")
    return arr


def hellinger(p, q) -> float:
    """(1/√2)·‖√p − √q‖₂ for two discrete distributions of equal length."""
    p = _as_distribution(p, "P")
    q = _as_distribution(q, "Q")
    if p.shape != q.shape:
        raise ContractError(f"length mismatch: {p.size} vs {q.size}")
    return float(min(1.0, np.linalg.norm(np.sqrt(p) - np.sqrt(q)) / _SQRT2))


def min_hellinger(p, samples: np.ndarray) -> float:
    """Smallest distance from ``p`` to any row of ``samples``."""
    root = np.sqrt(_as_distribution(p, "P"))
    d = np.linalg.norm(np.sqrt(samples) - root, axis=1) / _SQRT2
    return float(min(1.0, d.min()))


def region_mask(rule: LearnedRule, probs: np.ndarray, names: Sequence[str],
                action: int | None = None, rule_index: int | None = None) -> np.ndarray:
    """Which belief rows lie in the region selected by ``action`` or ``rule_index``.

    With ``rule_index`` the region is that action rule's body; with ``action``
    it is the set of beliefs at which taking ``action`` satisfies the template.
    """
    cols = {n: probs[:, i] for i, n in enumerate(names)}
    ops = {"<": np.less, ">": np.greater, "<=": np.less_equal, ">=": np.greater_equal}

    def body(r) -> np.ndarray:
        out = np.zeros(len(probs), dtype=bool)
        for sub in r.body:
            acc = np.ones(len(probs), dtype=bool)
            for lit in sub.literals:
                if lit.prob_var not in cols:
                    raise ContractError(f"rule uses {lit.prob_var!r}, not among {list(names)}")
                x = rule.assignment[lit.rhs] if isinstance(lit.rhs, str) else lit.rhs
                acc &= ops[lit.op](cols[lit.prob_var], x)
            out |= acc
        return out

    rules = rule.template.rules
    if rule_index is not None:
        return body(rules[rule_index])
    if action is None:
        raise ValueError("give an action or a rule index")
    mask = np.ones(len(probs), dtype=bool)
    for r in rules:
        mask &= body(r) == (r.action == action)
    return mask


def sample_satisfying_beliefs(rule: LearnedRule, w: int, seed: int = 0, *,
                              names: Sequence[str] | None = None, action: int | None = None,
                              rule_index: int | None = None) -> np.ndarray:
    """Rejection-sample ``w`` beliefs uniformly from a rule region of the simplex."""
    if w < 1:
        raise ValueError("w must be >= 1")
    names = tuple(names or rule.template.prob_vars)
    if action is None and rule_index is None:
        rule_index = 0
    rng = np.random.default_rng(seed)
    kept, proposed, accepted = [], 0, 0
    while accepted < w:
        batch = rng.dirichlet(np.ones(len(names)), size=_BATCH)
        proposed += _BATCH
        good = batch[region_mask(rule, batch, names, action=action, rule_index=rule_index)]
        kept.append(good)
        accepted += len(good)
        if proposed >= MAX_PROPOSALS and accepted < MIN_ACCEPTANCE * proposed:
            raise UnsatRegionError(
                f"acceptance rate {accepted / proposed:.2e} over {proposed} proposals; "
                "the rule region is empty or vanishingly small"
            )
    return np.concatenate(kept)[:w]


@dataclass(frozen=True)
class AnomalyConfig:
    tau: float = 0.045
    w: int = 5000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.w < 1:
            raise ValueError("w must be >= 1")


@dataclass(frozen=True)
class Violation:
    index: int
    run_id: int
    step_index: int
    action: int
    belief: dict[str, float]
    h: float
    unexpected: bool


@dataclass
class AnomalyReport:
    violations: list[Violation]
    rule: LearnedRule
    config: AnomalyConfig
    total_steps: int | None = None
    action_phrases: dict[int, str] = field(default_factory=dict)
    unscored: list[tuple[int, str]] = field(default_factory=list)

    @property
    def unexpected(self) -> list[Violation]:
        return [v for v in self.violations if v.unexpected]

    def to_json(self) -> dict:
        return {
            "config": asdict(self.config),
            "rule": self.rule.to_json(),
            "total_steps": self.total_steps,
            "violations": [asdict(v) for v in self.violations],
            "unscored": [{"index": i, "reason": r} for i, r in self.unscored],
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=1)

    def text(self, trace_name: str = "trace") -> str:
        lines = []
        if self.total_steps is not None:
            failed = len(self.violations) + len(self.unscored)
            lines.append(f"fail to satisfy {failed} steps out of {self.total_steps}")
        lines.append(describe(self.rule, self.action_phrases))
        lines.append("Unsatisfiable steps:")
        for v in self.violations:
            probs = " ".join(f"{_label(k)} = {p:.3f}" for k, p in v.belief.items())
            head = "ANOMALY: " if v.unexpected else ""
            pad = " " * len(head)
            lines.append(f"{head}run {trace_name}/Run_{v.run_id} step {v.step_index}:")
            lines.append(f"{pad}action {v.action} with belief {probs}")
            lines.append(f"{pad}--- Hellinger = {v.h!r}")
            lines.append("")
        for i, reason in self.unscored:
            lines.append(f"UNSCORED: step #{i}: {reason}")
        return "\n".join(lines)


def _label(name: str) -> str:
    return "P_" + name[2:] if name.startswith("p_") and name[2:].isdigit() else name


def classify_violations(rule: LearnedRule, steps: Sequence[TraceStep], config: AnomalyConfig,
                        indices: Sequence[int] | None = None, total_steps: int | None = None,
                        names: Sequence[str] | None = None, skip_empty_regions: bool = False) -> AnomalyReport:
    """Distance of each violating step to the region where its action is rule-consistent.

    With ``skip_empty_regions`` a step whose region cannot be sampled is listed
    in ``unscored`` instead of raising :class:`UnsatRegionError`.
    """
    names = tuple(names or (steps[0].belief if steps else rule.template.prob_vars))
    indices = list(range(len(steps))) if indices is None else list(indices)
    samples: dict[int, np.ndarray | UnsatRegionError] = {}
    out, unscored = [], []
    for idx, step in zip(indices, steps):
        if step.action not in samples:
            try:
                samples[step.action] = sample_satisfying_beliefs(
                    rule, config.w, config.seed, names=names, action=step.action
                )
            except UnsatRegionError as exc:
                if not skip_empty_regions:
                    raise
                samples[step.action] = exc
        region = samples[step.action]
        if isinstance(region, UnsatRegionError):
            unscored.append((idx, f"action {step.action}: {region}"))
            continue
        p = np.array([step.belief[n] for n in names])
        p = np.clip(p, 0.0, None)
        p = p / p.sum()
        h = min_hellinger(p, region)
        out.append(Violation(idx, step.run_id, step.step_index, step.action,
                             dict(step.belief), h, h >= config.tau))
    out.sort(key=lambda v: (-v.h, v.index))
    return AnomalyReport(out, rule, config, total_steps, unscored=unscored)
