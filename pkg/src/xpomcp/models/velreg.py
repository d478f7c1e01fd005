"""Velocity regulation on an eight-segment path with hidden segment difficulty.

State encoding: ``difficulty_code * STRIDE + position`` where
``difficulty_code`` packs the eight difficulties as base-3 digits (segment
``k`` is digit ``k``) and ``position`` is the index of the subsegment about to
be traversed (0..34); ``position == n_subsegments`` is terminal. Position
doubles as elapsed time, counted in subsegments.

Acting in subsegment ``i`` pays ``length[i] * (1 + speed)``, minus the
collision penalty when a collision is sampled, then moves to ``i + 1`` and
emits the occupancy reading of the new subsegment.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np
from numba import njit

from .base import DegenerateBeliefError, PomdpModel, check_probability_table, require_keys

SUBSEGMENT_COUNTS = (3, 5, 2, 3, 2, 5, 4, 11)
SUBSEGMENT_LENGTHS = (
    0.9, 0.9, 1.0,
    1.0, 1.0, 1.2, 0.9, 1.15,
    0.6, 0.6,
    0.9, 0.9, 1.0,
    1.1, 1.1,
    1.4, 1.0, 0.9, 0.9, 0.95,
    1.0, 0.9, 0.9, 0.9,
    1.0, 1.4, 1.2, 1.2, 1.2, 1.2, 1.2, 1.2, 1.2, 1.2, 1.2,
)
OCCUPANCY = (0.0, 0.5, 1.0)
# rows: difficulty 0..2, columns: speed 0..2
COLLISION = (
    (0.0, 0.0, 0.028),
    (0.0, 0.056, 0.11),
    (0.0, 0.14, 0.25),
)
N_SEGMENTS = 8
N_DIFFICULTY = 3
N_HIDDEN = N_DIFFICULTY**N_SEGMENTS
STRIDE = 64

# params layout
_P_PENALTY = 0
_P_NSUB = 1
_P_PERTURB = 2
_P_OCC = 3
_P_COLL = 6
_P_LEN = 15


@njit(cache=True)
def _digit(code, seg):
    return (code // (3**seg)) % 3


@njit(cache=True)
def velreg_initial(params):
    return np.int64(np.random.randint(0, 3**8)) * STRIDE


@njit(cache=True)
def velreg_step(state, action, params):
    n_sub = np.int64(params[_P_NSUB])
    pos = state % STRIDE
    code = state // STRIDE
    seg = np.int64(params[_P_LEN + n_sub + pos])
    f = _digit(code, seg)
    reward = params[_P_LEN + pos] * (1.0 + action)
    if np.random.random() < params[_P_COLL + 3 * f + action]:
        reward += params[_P_PENALTY]
    pos2 = pos + 1
    next_state = code * STRIDE + pos2
    if pos2 >= n_sub:
        return next_state, np.int64(0), reward, True
    f2 = _digit(code, np.int64(params[_P_LEN + n_sub + pos2]))
    obs = np.int64(1) if np.random.random() < params[_P_OCC + f2] else np.int64(0)
    return next_state, obs, reward, False


@njit(cache=True)
def velreg_perturb(state, params):
    if np.random.random() >= params[_P_PERTURB]:
        return state
    pos = state % STRIDE
    code = state // STRIDE
    seg = np.random.randint(0, 8)
    old = _digit(code, seg)
    new = np.random.randint(0, 3)
    code = code + (new - old) * (3**seg)
    return code * STRIDE + pos


@dataclass(frozen=True)
class VelocityRegulationModel(PomdpModel):
    """Robot choosing a speed level per subsegment of a known path."""

    subsegment_counts: tuple[int, ...] = SUBSEGMENT_COUNTS
    subsegment_lengths: tuple[float, ...] = SUBSEGMENT_LENGTHS
    occupancy: tuple[float, ...] = OCCUPANCY
    collision: tuple[tuple[float, ...], ...] = COLLISION
    collision_penalty: float = -100.0
    gamma: float = 0.95
    perturb_probability: float = 0.1
    segment_of: tuple[int, ...] = field(init=False, repr=False)

    model_id: ClassVar[str] = "velreg"
    n_actions: ClassVar[int] = 3
    n_observations: ClassVar[int] = 2
    action_names: ClassVar[tuple[str, ...]] = ("speed 0", "speed 1", "speed 2")

    def __post_init__(self):
        counts = tuple(int(c) for c in self.subsegment_counts)
        if len(counts) != N_SEGMENTS or min(counts) < 1:
            raise ValueError(f"need {N_SEGMENTS} positive subsegment counts")
        if len(self.subsegment_lengths) != sum(counts):
            raise ValueError("one length per subsegment required")
        if sum(counts) >= STRIDE:
            raise ValueError(f"at most {STRIDE - 1} subsegments supported")
        check_probability_table("occupancy", self.occupancy)
        check_probability_table("collision", np.ravel(self.collision))
        check_probability_table("perturb_probability", [self.perturb_probability])
        if np.shape(self.collision) != (3, 3) or len(self.occupancy) != 3:
            raise ValueError("occupancy needs 3 entries and collision a 3x3 table")
        seg = tuple(k for k, c in enumerate(counts) for _ in range(c))
        object.__setattr__(self, "segment_of", seg)

    @property
    def discount(self) -> float:
        return self.gamma

    @property
    def horizon(self) -> int:
        return len(self.subsegment_lengths)

    @property
    def belief_names(self) -> tuple[str, ...]:
        return ("p_0", "p_1", "p_2")

    def params(self) -> np.ndarray:
        return np.concatenate(
            [
                [self.collision_penalty, float(self.horizon), self.perturb_probability],
                np.asarray(self.occupancy, dtype=float),
                np.ravel(np.asarray(self.collision, dtype=float)),
                np.asarray(self.subsegment_lengths, dtype=float),
                np.asarray(self.segment_of, dtype=float),
            ]
        ).astype(np.float64)

    def kernels(self):
        return velreg_initial, velreg_step, velreg_perturb

    def reward_range(self) -> float:
        lengths = np.asarray(self.subsegment_lengths)
        return float(3 * lengths.max() - (2 * lengths.min() + self.collision_penalty))

    def is_terminal(self, state: int) -> bool:
        return state % STRIDE >= self.horizon

    # -- state helpers -------------------------------------------------

    @staticmethod
    def encode(difficulties, position: int = 0) -> int:
        code = sum(int(f) * 3**k for k, f in enumerate(difficulties))
        return code * STRIDE + position

    @staticmethod
    def decode(state: int) -> tuple[list[int], int]:
        code, pos = divmod(int(state), STRIDE)
        return [(code // 3**k) % 3 for k in range(N_SEGMENTS)], pos

    def segment(self, state: int) -> int:
        pos = int(state) % STRIDE
        return self.segment_of[min(pos, self.horizon - 1)]

    def belief_projection(self, particles: np.ndarray) -> dict[str, float]:
        particles = np.asarray(particles, dtype=np.int64)
        if particles.size == 0:
            raise DegenerateBeliefError("cannot project an empty particle set")
        seg = self.segment(int(particles[0]))
        digits = (particles // STRIDE) // 3**seg % 3
        counts = np.bincount(digits, minlength=3).astype(float)
        probs = counts / counts.sum()
        return {f"p_{d}": float(probs[d]) for d in range(3)}

    def to_config(self) -> dict:
        return {
            "subsegment_counts": list(self.subsegment_counts),
            "subsegment_lengths": list(self.subsegment_lengths),
            "occupancy": list(self.occupancy),
            "collision": [list(r) for r in self.collision],
            "collision_penalty": self.collision_penalty,
            "gamma": self.gamma,
            "perturb_probability": self.perturb_probability,
        }

    @classmethod
    def from_config(cls, config: dict) -> "VelocityRegulationModel":
        require_keys(config, set(cls().to_config()), "velreg config")
        kw = dict(config)
        for key in ("subsegment_counts", "subsegment_lengths", "occupancy"):
            if key in kw:
                kw[key] = tuple(kw[key])
        if "collision" in kw:
            kw["collision"] = tuple(tuple(r) for r in kw["collision"])
        return cls(**kw)
