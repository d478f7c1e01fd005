"""Black-box simulator contract shared by every benchmark problem.

A model is immutable after construction. All randomness comes from the
caller: Python-level entry points take a ``numpy.random.Generator`` and the
jitted kernels draw from numba's RNG, which the caller seeds explicitly.
"""
from __future__ import annotations

import hashlib
import json
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, ClassVar, Mapping, NamedTuple, Sequence

import numpy as np
from numba import njit


class ContractError(ValueError):
    """A caller broke the simulator contract (bad action, terminal state...)."""


class DegenerateBeliefError(ValueError):
    """Belief projection was asked for an empty particle set."""


class StepResult(NamedTuple):
    next_state: int
    observation: int
    reward: float
    terminal: bool


@njit(cache=True)
def seed_kernel_rng(seed):
    np.random.seed(seed)


def _kernel_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**31 - 1))


@dataclass(frozen=True)
class PomdpModel(ABC):
    """Abstract POMDP simulator.

    Subclasses provide three numba kernels with fixed signatures:

    ``initial_kernel(params) -> state``
    ``step_kernel(state, action, params) -> (next_state, obs, reward, terminal)``
    ``perturb_kernel(state, params) -> state`` (particle reinvigoration)

    ``params`` is the float64 array returned by :meth:`params`.
    """

    model_id: ClassVar[str]
    n_actions: ClassVar[int]
    n_observations: ClassVar[int]
    action_names: ClassVar[tuple[str, ...]]

    @property
    @abstractmethod
    def discount(self) -> float: ...

    @property
    @abstractmethod
    def horizon(self) -> int:
        """Maximum number of real steps per run."""

    @property
    @abstractmethod
    def belief_names(self) -> tuple[str, ...]: ...

    @abstractmethod
    def params(self) -> np.ndarray: ...

    @abstractmethod
    def kernels(self) -> tuple[Any, Any, Any]:
        """Return ``(initial_kernel, step_kernel, perturb_kernel)``."""

    @abstractmethod
    def reward_range(self) -> float: ...

    @abstractmethod
    def to_config(self) -> dict: ...

    @abstractmethod
    def belief_projection(self, particles: np.ndarray) -> dict[str, float]: ...

    def sample_initial_state(self, rng: np.random.Generator) -> int:
        init, _, _ = self.kernels()
        seed_kernel_rng(_kernel_seed(rng))
        return int(init(self.params()))

    def step(self, state: int, action: int, rng: np.random.Generator) -> StepResult:
        if not 0 <= action < self.n_actions:
            raise ContractError(f"action {action} out of range [0, {self.n_actions})")
        if self.is_terminal(state):
            raise ContractError(f"step called on terminal state {state}")
        _, step, _ = self.kernels()
        seed_kernel_rng(_kernel_seed(rng))
        s2, o, r, term = step(np.int64(state), np.int64(action), self.params())
        return StepResult(int(s2), int(o), float(r), bool(term))

    def is_terminal(self, state: int) -> bool:
        return False

    def params_hash(self) -> str:
        blob = json.dumps({"model": self.model_id, **self.to_config()}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def check_probability_table(name: str, values: Sequence[float]) -> None:
    arr = np.asarray(values, dtype=float)
    if np.any(arr < 0) or np.any(arr > 1) or not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: probabilities must lie in [0, 1]")


def require_keys(config: Mapping[str, Any], allowed: set[str], where: str) -> None:
    unknown = set(config) - allowed
    if unknown:
        raise ValueError(f"{where}: unknown config keys {sorted(unknown)}")


@dataclass(frozen=True)
class TabularPomdp:
    """Explicit tables for small problems solvable by value iteration.

    ``transition[a, s, s2]``, ``observation[a, s2, o]``, ``reward[a, s]``.
    """

    transition: np.ndarray
    observation: np.ndarray
    reward: np.ndarray
    state_names: tuple[str, ...]
    action_names: tuple[str, ...]
    safe_action: int = 0

    @property
    def n_states(self) -> int:
        return self.transition.shape[1]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[0]

    @property
    def n_observations(self) -> int:
        return self.observation.shape[2]
