"""POMCP: UCT search over a history tree with a particle-filter belief.

The tree lives in flat arrays so the simulation loop can run under numba.
Belief node ``b`` owns action statistics ``q_visits[b, a]`` / ``q_value[b, a]``
and child pointers ``children[b, a, o]`` (``-1`` when unexpanded). The root is
always node 0; after each real step the chosen subtree is compacted to the
front of fresh arrays.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numba import njit

from .models.base import PomdpModel, seed_kernel_rng
from .trace import TraceStep

log = logging.getLogger(__name__)


class ParticleDeprivationError(RuntimeError):
    """The belief ran out of particles consistent with the history."""


@dataclass(frozen=True)
class PlannerConfig:
    particle_count: int = 2**13
    simulations: int = 2**13
    reward_range: float | None = None  # W; defaults to the model's true range
    max_steps: int | None = None  # defaults to the model horizon
    seed: int = 0
    reinvigoration_attempts: int = 20

    def __post_init__(self):
        if self.particle_count < 1:
            raise ValueError("particle_count must be >= 1")
        if self.simulations < 1:
            raise ValueError("simulations must be >= 1")
        if self.reward_range is not None and self.reward_range <= 0:
            raise ValueError("reward_range (W) must be > 0")

    def exploration(self, model: PomdpModel) -> float:
        return float(self.reward_range if self.reward_range is not None else model.reward_range())

    def steps(self, model: PomdpModel) -> int:
        return self.max_steps if self.max_steps is not None else model.horizon


@njit(cache=True)
def _ucb_action(q_visits, q_value, node_visits, b, c, n_actions):
    for a in range(n_actions):
        if q_visits[b, a] == 0:
            return a
    log_n = np.log(node_visits[b])
    best = 0
    best_val = -np.inf
    for a in range(n_actions):
        val = q_value[b, a] + c * np.sqrt(log_n / q_visits[b, a])
        if val > best_val:
            best_val = val
            best = a
    return best


@njit(cache=True)
def _rollout(step_fn, params, state, depth, max_depth, gamma, n_actions):
    total = 0.0
    disc = 1.0
    while depth < max_depth:
        a = np.random.randint(0, n_actions)
        state, _, r, term = step_fn(state, np.int64(a), params)
        total += disc * r
        disc *= gamma
        depth += 1
        if term:
            break
    return total


@njit(cache=True)
def _search(
    step_fn, params, particles, node_visits, q_visits, q_value, children, n_nodes,
    n_sims, c, gamma, max_depth, seed, first_action, first_obs, first_state,
):
    np.random.seed(seed)
    n_actions = q_visits.shape[1]
    path_b = np.empty(max_depth, np.int64)
    path_a = np.empty(max_depth, np.int64)
    path_r = np.empty(max_depth, np.float64)
    for sim in range(n_sims):
        state = particles[np.random.randint(0, particles.shape[0])]
        b = 0
        depth = 0
        tail = 0.0
        first_action[sim] = -1
        while True:
            a = _ucb_action(q_visits, q_value, node_visits, b, c, n_actions)
            s2, o, r, term = step_fn(state, np.int64(a), params)
            path_b[depth] = b
            path_a[depth] = a
            path_r[depth] = r
            if depth == 0:
                first_action[sim] = a
                first_obs[sim] = o
                first_state[sim] = s2
            depth += 1
            if term or depth >= max_depth:
                break
            child = children[b, a, o]
            if child < 0:
                children[b, a, o] = n_nodes
                n_nodes += 1
                tail = _rollout(step_fn, params, s2, depth, max_depth, gamma, n_actions)
                break
            b = child
            state = s2
        ret = tail
        for i in range(depth - 1, -1, -1):
            ret = path_r[i] + gamma * ret
            bi = path_b[i]
            ai = path_a[i]
            node_visits[bi] += 1
            q_visits[bi, ai] += 1
            q_value[bi, ai] += (ret - q_value[bi, ai]) / q_visits[bi, ai]
    return n_nodes


@njit(cache=True)
def _compact(new_root, node_visits, q_visits, q_value, children, out_nv, out_qn, out_qv, out_ch):
    """Copy the subtree under ``new_root`` to the front of the out arrays."""
    n_a = children.shape[1]
    n_o = children.shape[2]
    queue = np.empty(node_visits.shape[0], np.int64)
    queue[0] = new_root
    head = 0
    tail = 1
    while head < tail:
        old = queue[head]
        out_nv[head] = node_visits[old]
        for a in range(n_a):
            out_qn[head, a] = q_visits[old, a]
            out_qv[head, a] = q_value[old, a]
            for o in range(n_o):
                ch = children[old, a, o]
                if ch >= 0:
                    out_ch[head, a, o] = tail
                    queue[tail] = ch
                    tail += 1
        head += 1
    return tail


@njit(cache=True)
def _filter_by_observation(step_fn, params, particles, action, obs, want, attempts):
    """Rejection-sample successors of ``particles`` that emit ``obs``."""
    out = np.empty(want, np.int64)
    k = 0
    for _ in range(attempts):
        s = particles[np.random.randint(0, particles.shape[0])]
        s2, o, _, term = step_fn(s, np.int64(action), params)
        if o == obs and not term:
            out[k] = s2
            k += 1
            if k == want:
                break
    return out[:k]


@njit(cache=True)
def _reinvigorate(perturb_fn, params, survivors, want):
    out = np.empty(want, np.int64)
    for i in range(want):
        out[i] = perturb_fn(survivors[np.random.randint(0, survivors.shape[0])], params)
    return out


class SearchTree:
    """Belief tree rooted at the agent's current history."""

    def __init__(self, model: PomdpModel, particles: np.ndarray, capacity: int = 1024):
        self.model = model
        self.particles = np.asarray(particles, dtype=np.int64)
        n_a, n_o = model.n_actions, model.n_observations
        self.node_visits = np.zeros(capacity, np.int64)
        self.q_visits = np.zeros((capacity, n_a), np.int64)
        self.q_value = np.zeros((capacity, n_a), np.float64)
        self.children = np.full((capacity, n_a, n_o), -1, np.int64)
        self.n_nodes = 1
        self._first = None

    @classmethod
    def from_prior(cls, model: PomdpModel, config: PlannerConfig, rng: np.random.Generator):
        init, _, _ = model.kernels()
        params = model.params()
        seed_kernel_rng(int(rng.integers(0, 2**31 - 1)))
        particles = np.array([init(params) for _ in range(config.particle_count)], np.int64)
        return cls(model, particles)

    def _reserve(self, extra: int) -> None:
        need = self.n_nodes + extra + 1
        cap = self.node_visits.shape[0]
        if need <= cap:
            return
        new_cap = max(need, 2 * cap)
        grow = new_cap - cap
        self.node_visits = np.concatenate([self.node_visits, np.zeros(grow, np.int64)])
        self.q_visits = np.concatenate([self.q_visits, np.zeros((grow,) + self.q_visits.shape[1:], np.int64)])
        self.q_value = np.concatenate([self.q_value, np.zeros((grow,) + self.q_value.shape[1:])])
        self.children = np.concatenate(
            [self.children, np.full((grow,) + self.children.shape[1:], -1, np.int64)]
        )

    def root_statistics(self) -> tuple[np.ndarray, np.ndarray]:
        return self.q_visits[0].copy(), self.q_value[0].copy()

    def best_action(self) -> int:
        visits, values = self.root_statistics()
        if not visits.any():
            return 0
        masked = np.where(visits > 0, values, -np.inf)
        return int(np.argmax(masked))  # argmax keeps the lowest index on ties


def plan_action(
    tree: SearchTree,
    config: PlannerConfig,
    rng: np.random.Generator,
    depth: int | None = None,
) -> int:
    """Run ``config.simulations`` UCT simulations from the root and pick greedily.

    Exploration uses UCB1 with constant ``c = W``: ``Q(h,a) + W*sqrt(ln N(h)/N(h,a))``.
    """
    if tree.particles.size == 0:
        raise ParticleDeprivationError("root belief has no particles")
    model = tree.model
    _, step_fn, _ = model.kernels()
    depth = depth if depth is not None else config.steps(model)
    n = config.simulations
    tree._reserve(n)
    first = (np.empty(n, np.int64), np.empty(n, np.int64), np.empty(n, np.int64))
    tree.n_nodes = _search(
        step_fn, model.params(), tree.particles, tree.node_visits, tree.q_visits,
        tree.q_value, tree.children, tree.n_nodes, n, config.exploration(model),
        model.discount, max(1, depth), int(rng.integers(0, 2**31 - 1)), *first,
    )
    tree._first = first
    return tree.best_action()


def update_belief(
    tree: SearchTree,
    action: int,
    observation: int,
    config: PlannerConfig,
    rng: np.random.Generator,
) -> SearchTree:
    """Advance the root to the (action, observation) child.

    Particles are the simulated successors that went through that child; when
    fewer than ``particle_count`` survive, the rest are drawn from the
    survivors through the model's perturbation kernel. With no survivors at
    all, successors are rejection-sampled from the previous belief.
    """
    model = tree.model
    _, step_fn, perturb_fn = model.kernels()
    params = model.params()
    want = config.particle_count
    seed_kernel_rng(int(rng.integers(0, 2**31 - 1)))

    if tree._first is not None:
        fa, fo, fs = tree._first
        survivors = fs[(fa == action) & (fo == observation)]
    else:
        survivors = np.empty(0, np.int64)
    if survivors.size == 0:
        survivors = _filter_by_observation(
            step_fn, params, tree.particles, action, observation, want,
            config.reinvigoration_attempts * want,
        )
        if survivors.size == 0:
            raise ParticleDeprivationError(
                f"no particle consistent with action {action}, observation {observation}"
            )
    if survivors.size > want:
        particles = rng.choice(survivors, size=want, replace=False)
    elif survivors.size < want:
        extra = _reinvigorate(perturb_fn, params, survivors, want - survivors.size)
        particles = np.concatenate([survivors, extra])
    else:
        particles = survivors.copy()

    new = SearchTree.__new__(SearchTree)
    new.model = model
    new.particles = particles.astype(np.int64)
    new._first = None
    child = tree.children[0, action, observation]
    cap = max(1024, tree.n_nodes)
    n_a, n_o = model.n_actions, model.n_observations
    new.node_visits = np.zeros(cap, np.int64)
    new.q_visits = np.zeros((cap, n_a), np.int64)
    new.q_value = np.zeros((cap, n_a), np.float64)
    new.children = np.full((cap, n_a, n_o), -1, np.int64)
    if child >= 0:
        new.n_nodes = _compact(
            child, tree.node_visits[: tree.n_nodes], tree.q_visits, tree.q_value,
            tree.children, new.node_visits, new.q_visits, new.q_value, new.children,
        )
    else:
        new.n_nodes = 1
    return new


def run_episode(
    model: PomdpModel,
    config: PlannerConfig,
    rng: np.random.Generator,
    run_id: int = 0,
) -> list[TraceStep]:
    """Play one run against a freshly sampled hidden state.

    Each step records the belief projection before acting, then the action.
    """
    state = model.sample_initial_state(rng)
    tree = SearchTree.from_prior(model, config, rng)
    horizon = config.steps(model)
    steps: list[TraceStep] = []
    for t in range(horizon):
        belief = model.belief_projection(tree.particles)
        action = plan_action(tree, config, rng, depth=horizon - t)
        steps.append(TraceStep(run_id=run_id, step_index=t, action=action, belief=belief))
        result = model.step(state, action, rng)
        if result.terminal or t == horizon - 1:
            break
        tree = update_belief(tree, action, result.observation, config, rng)
        state = result.next_state
    return steps


def run_seed(seed: int, run_id: int, attempt: int = 0) -> np.random.Generator:
    """Independent, order-free RNG stream for one run of a trace."""
    return np.random.default_rng(np.random.SeedSequence([seed, run_id, attempt]))


def simulate_runs(
    model: PomdpModel,
    config: PlannerConfig,
    n_runs: int,
    run_offset: int = 0,
    max_restarts: int = 5,
) -> list[TraceStep]:
    """Run ``n_runs`` episodes; a run hit by particle deprivation is restarted."""
    steps: list[TraceStep] = []
    for run in range(run_offset, run_offset + n_runs):
        for attempt in range(max_restarts + 1):
            try:
                steps.extend(run_episode(model, config, run_seed(config.seed, run, attempt), run))
                break
            except ParticleDeprivationError:
                log.warning("particle deprivation in run %d; restarting", run)
        else:
            raise ParticleDeprivationError(f"run {run} failed {max_restarts + 1} times")
    return steps
