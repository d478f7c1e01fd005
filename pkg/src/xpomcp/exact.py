"""Finite-horizon exact value iteration with incremental pruning.

Value functions are sets of alpha-vectors; each backup builds the
per-(action, observation) projections, cross-sums them one observation at a
time with pruning in between, and prunes the union over actions. Pruning
drops pointwise-dominated vectors first, then runs Lark's linear-program
filter over the belief simplex.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from .models.base import TabularPomdp
from .trace import Trace

MAX_STATES = 16
_LP_EPS = 1e-9
_DUP_DECIMALS = 10


class ModelMismatchError(ValueError):
    """The trace or model is not solvable by the tabular solver."""


@dataclass(frozen=True)
class AlphaSet:
    vectors: np.ndarray  # (n, |S|)
    actions: np.ndarray  # (n,)

    def __len__(self) -> int:
        return len(self.actions)

    def values(self, beliefs: np.ndarray) -> np.ndarray:
        return np.atleast_2d(beliefs) @ self.vectors.T


@dataclass(frozen=True)
class ExactPolicy:
    horizon: int
    discount: float
    alpha_sets: list[AlphaSet]  # index h = steps to go, 0..horizon
    safe_action: int = 0
    model_id: str = "tiger"
    state_names: tuple[str, ...] = field(default=())

    def value(self, belief, horizon: int | None = None) -> float:
        h = self.horizon if horizon is None else horizon
        return float(self.alpha_sets[h].values(np.asarray(belief, float)).max())

    def to_json(self) -> dict:
        return {
            "model_id": self.model_id,
            "horizon": self.horizon,
            "discount": self.discount,
            "safe_action": self.safe_action,
            "state_names": list(self.state_names),
            "alpha_sets": [
                {"steps_to_go": h, "actions": s.actions.tolist(), "vectors": s.vectors.tolist()}
                for h, s in enumerate(self.alpha_sets)
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "ExactPolicy":
        sets = [
            AlphaSet(np.asarray(s["vectors"], float).reshape(len(s["actions"]), -1),
                     np.asarray(s["actions"], int))
            for s in data["alpha_sets"]
        ]
        return cls(
            horizon=data["horizon"], discount=data["discount"], alpha_sets=sets,
            safe_action=data.get("safe_action", 0), model_id=data.get("model_id", "tiger"),
            state_names=tuple(data.get("state_names", ())),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "ExactPolicy":
        return cls.from_json(json.loads(Path(path).read_text()))


def _dedupe(vectors: np.ndarray, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    _, idx = np.unique(np.round(vectors, _DUP_DECIMALS), axis=0, return_index=True)
    idx = np.sort(idx)
    return vectors[idx], actions[idx]


def _pointwise_filter(vectors: np.ndarray, actions: np.ndarray):
    n = len(vectors)
    keep = np.ones(n, bool)
    for i in range(n):
        others = keep.copy()
        others[i] = False
        if others.any() and np.any(np.all(vectors[others] >= vectors[i] - 1e-12, axis=1)):
            keep[i] = False
    return vectors[keep], actions[keep]


def _lp_witness(alpha: np.ndarray, others: np.ndarray) -> float:
    """Max margin delta by which ``alpha`` beats every other vector at some belief."""
    n_s = alpha.shape[0]
    # variables: b (n_s), delta; maximize delta
    c = np.zeros(n_s + 1)
    c[-1] = -1.0
    A_ub = np.hstack([others - alpha, np.ones((len(others), 1))])
    b_ub = np.zeros(len(others))
    A_eq = np.hstack([np.ones((1, n_s)), np.zeros((1, 1))])
    bounds = [(0, 1)] * n_s + [(None, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0], bounds=bounds, method="highs")
    if not res.success:
        return -np.inf
    return -res.fun


def prune(vectors: np.ndarray, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return the minimal subset inducing the same upper envelope on the simplex."""
    if len(vectors) <= 1:
        return vectors, actions
    vectors, actions = _dedupe(vectors, actions)
    vectors, actions = _pointwise_filter(vectors, actions)
    keep = np.ones(len(vectors), bool)
    for i in range(len(vectors)):
        others = keep.copy()
        others[i] = False
        if not others.any():
            continue
        if _lp_witness(vectors[i], vectors[others]) <= _LP_EPS:
            keep[i] = False
    return vectors[keep], actions[keep]


def _cross_sum(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a[:, None, :] + b[None, :, :]).reshape(-1, a.shape[1])


def backup(model: TabularPomdp, prev: AlphaSet, discount: float, pruning: bool = True) -> AlphaSet:
    T, Z, R = model.transition, model.observation, model.reward
    n_a, n_o = model.n_actions, model.n_observations
    all_vecs, all_acts = [], []
    for a in range(n_a):
        acc = None
        for o in range(n_o):
            # proj[s, s2] = T[a, s, s2] * Z[a, s2, o]
            proj = T[a] * Z[a, :, o][None, :]
            g = R[a][None, :] / n_o + discount * prev.vectors @ proj.T
            dummy = np.full(len(g), a)
            if pruning:
                g, _ = prune(g, dummy)
            acc = g if acc is None else _cross_sum(acc, g)
            if pruning:
                acc, _ = prune(acc, np.full(len(acc), a))
        all_vecs.append(acc)
        all_acts.append(np.full(len(acc), a))
    vecs = np.vstack(all_vecs)
    acts = np.concatenate(all_acts)
    if pruning:
        vecs, acts = prune(vecs, acts)
    return AlphaSet(vecs, acts)


def solve(model: TabularPomdp, horizon: int, discount: float, pruning: bool = True,
          model_id: str = "tiger") -> ExactPolicy:
    if model.n_states > MAX_STATES:
        raise ModelMismatchError(
            f"{model.n_states} states exceed the tabular guard of {MAX_STATES}"
        )
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    sets = [AlphaSet(np.zeros((1, model.n_states)), np.array([-1]))]
    for _ in range(horizon):
        sets.append(backup(model, sets[-1], discount, pruning=pruning))
    return ExactPolicy(
        horizon=horizon, discount=discount, alpha_sets=sets, safe_action=model.safe_action,
        model_id=model_id, state_names=model.state_names,
    )


def action_values(policy: ExactPolicy, belief, horizon: int | None = None) -> dict[int, float]:
    """Best value achievable when starting with each action."""
    h = policy.horizon if horizon is None else horizon
    s = policy.alpha_sets[h]
    vals = s.values(np.asarray(belief, float))[0]
    return {int(a): float(vals[s.actions == a].max()) for a in np.unique(s.actions)}


def optimal_action(policy: ExactPolicy, belief, horizon: int | None = None,
                   tie_tolerance: float = 1e-9) -> int | None:
    """Argmax over alpha-vectors; near-ties resolve to the safe action."""
    h = policy.horizon if horizon is None else horizon
    if h == 0:
        return None
    vals = action_values(policy, belief, h)
    best = max(vals.values())
    if policy.safe_action in vals and vals[policy.safe_action] >= best - tie_tolerance:
        return policy.safe_action
    return min(a for a, v in vals.items() if v >= best - tie_tolerance)


def opening_threshold(policy: ExactPolicy, horizon: int | None = None, tol: float = 1e-12) -> float:
    """Smallest treasure-side probability at which opening beats listening (Tiger)."""
    lo, hi = 0.5, 1.0

    def opens(p):
        return optimal_action(policy, [1 - p, p], horizon) != policy.safe_action

    if not opens(hi):
        return float("nan")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if opens(mid):
            hi = mid
        else:
            lo = mid
    return hi


def label_trace(trace: Trace, policy: ExactPolicy, model) -> Trace:
    """Fill ``optimal_action`` for every step from the full-horizon policy."""
    if trace.header.model_id != policy.model_id or not hasattr(model, "tabular_belief"):
        raise ModelMismatchError(
            f"no exact policy for model {trace.header.model_id!r}; exact solution is intractable"
        )
    steps = []
    for step in trace.steps:
        opt = optimal_action(policy, model.tabular_belief(step.belief))
        steps.append(replace(step, optimal_action=opt))
    return trace.with_steps(steps)


def error_rate(trace: Trace) -> float:
    flags = [s.is_error for s in trace.steps]
    if any(f is None for f in flags):
        raise ValueError("trace is not labeled")
    return float(np.mean(flags))
