"""The two-door Tiger problem with terminating door openings."""
from __future__ import annotations

from dataclasses import dataclass
from typing import ClassVar

import numpy as np
from numba import njit

from .base import (
    DegenerateBeliefError,
    PomdpModel,
    TabularPomdp,
    check_probability_table,
    require_keys,
)

TIGER_LEFT, TIGER_RIGHT, DONE = 0, 1, 2
LISTEN, OPEN_LEFT, OPEN_RIGHT = 0, 1, 2
HEAR_LEFT, HEAR_RIGHT = 0, 1

# params layout: [hear_accuracy, reward_treasure, reward_tiger, reward_listen]


@njit(cache=True)
def tiger_initial(params):
    return np.int64(TIGER_LEFT if np.random.random() < 0.5 else TIGER_RIGHT)


@njit(cache=True)
def tiger_step(state, action, params):
    if action == LISTEN:
        correct = np.random.random() < params[0]
        if state == TIGER_LEFT:
            obs = HEAR_LEFT if correct else HEAR_RIGHT
        else:
            obs = HEAR_RIGHT if correct else HEAR_LEFT
        return state, np.int64(obs), params[3], False
    opened_tiger = (action == OPEN_LEFT and state == TIGER_LEFT) or (
        action == OPEN_RIGHT and state == TIGER_RIGHT
    )
    reward = params[2] if opened_tiger else params[1]
    return np.int64(DONE), np.int64(HEAR_LEFT), reward, True


@njit(cache=True)
def tiger_perturb(state, params):
    return state


@dataclass(frozen=True)
class TigerModel(PomdpModel):
    """Tiger behind one of two doors; listening is noisy, opening ends the run.

    Belief names follow the treasure: ``p_left`` is the probability that the
    treasure (not the tiger) is behind the left door.
    """

    hear_accuracy: float = 0.85
    reward_treasure: float = 10.0
    reward_tiger: float = -100.0
    reward_listen: float = -1.0
    gamma: float = 0.95
    max_steps: int = 10

    model_id: ClassVar[str] = "tiger"
    n_actions: ClassVar[int] = 3
    n_observations: ClassVar[int] = 2
    action_names: ClassVar[tuple[str, ...]] = ("listen", "open-left", "open-right")
    state_names: ClassVar[tuple[str, ...]] = ("tiger-left", "tiger-right")

    def __post_init__(self):
        check_probability_table("hear_accuracy", [self.hear_accuracy])
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    @property
    def discount(self) -> float:
        return self.gamma

    @property
    def horizon(self) -> int:
        return self.max_steps

    @property
    def belief_names(self) -> tuple[str, ...]:
        return ("p_left", "p_right")

    def params(self) -> np.ndarray:
        return np.array(
            [self.hear_accuracy, self.reward_treasure, self.reward_tiger, self.reward_listen],
            dtype=np.float64,
        )

    def kernels(self):
        return tiger_initial, tiger_step, tiger_perturb

    def reward_range(self) -> float:
        return max(self.reward_treasure, self.reward_listen) - min(
            self.reward_tiger, self.reward_listen
        )

    def is_terminal(self, state: int) -> bool:
        return state == DONE

    def belief_projection(self, particles: np.ndarray) -> dict[str, float]:
        particles = np.asarray(particles)
        if particles.size == 0:
            raise DegenerateBeliefError("cannot project an empty particle set")
        tiger_left = float(np.count_nonzero(particles == TIGER_LEFT)) / particles.size
        # treasure sits behind the door without the tiger
        return {"p_left": 1.0 - tiger_left, "p_right": tiger_left}

    def tabular(self) -> TabularPomdp:
        """Standard two-state Tiger tables used for exact ground truth.

        Unlike the simulator, opening a door here resets the tiger uniformly
        and the process continues; observations after opening are
        uninformative.
        """
        n_s, n_a, n_o = 2, 3, 2
        acc = self.hear_accuracy
        T = np.zeros((n_a, n_s, n_s))
        T[LISTEN] = np.eye(n_s)
        T[OPEN_LEFT] = T[OPEN_RIGHT] = 0.5
        Z = np.zeros((n_a, n_s, n_o))
        Z[LISTEN] = [[acc, 1 - acc], [1 - acc, acc]]
        Z[OPEN_LEFT] = Z[OPEN_RIGHT] = 0.5
        R = np.zeros((n_a, n_s))
        R[LISTEN] = self.reward_listen
        R[OPEN_LEFT] = [self.reward_tiger, self.reward_treasure]
        R[OPEN_RIGHT] = [self.reward_treasure, self.reward_tiger]
        return TabularPomdp(
            transition=T,
            observation=Z,
            reward=R,
            state_names=self.state_names,
            action_names=self.action_names,
            safe_action=LISTEN,
        )

    def tabular_belief(self, belief: dict[str, float]) -> np.ndarray:
        """Map a recorded belief projection onto the tabular state order."""
        return np.array([belief["p_right"], belief["p_left"]])

    def to_config(self) -> dict:
        return {
            "hear_accuracy": self.hear_accuracy,
            "reward_treasure": self.reward_treasure,
            "reward_tiger": self.reward_tiger,
            "reward_listen": self.reward_listen,
            "gamma": self.gamma,
            "max_steps": self.max_steps,
        }

    @classmethod
    def from_config(cls, config: dict) -> "TigerModel":
        require_keys(config, set(cls().to_config()), "tiger config")
        return cls(**config)
