import dataclasses
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from xpomcp import exact
from xpomcp.exact import ExactPolicy, ModelMismatchError
from xpomcp.models import TigerModel
from xpomcp.trace import Trace, TraceHeader, TraceStep, read_trace

FIXTURE = Path(__file__).parent / "fixtures" / "tiger_W40_1000.jsonl"
THETA_STAR = 0.9565598421932009
GAMMA, ACC = 0.95, 0.85


@pytest.fixture(scope="module")
def policy():
    model = TigerModel()
    return exact.solve(model.tabular(), 10, GAMMA)


def grid_dp_actions(b: np.ndarray, horizon: int = 10) -> np.ndarray:
    """Belief-space dynamic program for reset Tiger, evaluated pointwise (b = P(tiger left))."""

    @lru_cache(maxsize=None)
    def v_half(h):
        return float(value(h, np.array([0.5]))[0])

    def q(h, b):
        if h == 0:
            return None
        hl = ACC * b + (1 - ACC) * (1 - b)
        hr = 1 - hl
        listen = -1 + GAMMA * (hl * value(h - 1, ACC * b / hl) + hr * value(h - 1, (1 - ACC) * b / hr))
        reset = GAMMA * v_half(h - 1)
        open_left = -100 * b + 10 * (1 - b) + reset
        open_right = 10 * b - 100 * (1 - b) + reset
        return np.stack([listen, open_left, open_right])

    def value(h, b):
        return np.zeros_like(b) if h == 0 else q(h, b).max(axis=0)

    qs = q(horizon, b)
    best = qs.max(axis=0)
    acts = np.where(qs[0] >= best - 1e-9, 0, np.argmax(qs, axis=0))
    return acts, best


def test_agrees_with_grid_dp_everywhere(policy):
    b = np.linspace(0, 1, 10**4)
    oracle, oracle_values = grid_dp_actions(b)
    ours = np.array([exact.optimal_action(policy, [x, 1 - x]) for x in b])
    np.testing.assert_array_equal(ours, oracle)
    values = np.array([policy.value([x, 1 - x]) for x in b[::97]])
    np.testing.assert_allclose(values, oracle_values[::97], atol=1e-9)


def test_opening_threshold_golden(policy):
    assert exact.opening_threshold(policy) == pytest.approx(THETA_STAR, abs=1e-9)


def test_example_beliefs(policy):
    model = TigerModel()
    assert exact.optimal_action(policy, model.tabular_belief({"p_left": 0.5, "p_right": 0.5})) == 0
    # 0.999 on the treasure being right: open the right door
    assert exact.optimal_action(policy, model.tabular_belief({"p_left": 0.001, "p_right": 0.999})) == 2


def test_indifference_point_resolves_to_listen(policy):
    theta = exact.opening_threshold(policy)
    vals = exact.action_values(policy, [1 - theta, theta])
    assert abs(vals[0] - max(vals.values())) < 1e-8
    assert exact.optimal_action(policy, [1 - (theta - 1e-10), theta - 1e-10]) == 0


def test_pruned_matches_unpruned():
    model = TigerModel().tabular()
    b = np.linspace(0, 1, 10**4)
    beliefs = np.stack([b, 1 - b], axis=1)
    a = exact.solve(model, 3, GAMMA, pruning=True)
    u = exact.solve(model, 3, GAMMA, pruning=False)
    assert len(a.alpha_sets[3]) < len(u.alpha_sets[3])
    np.testing.assert_allclose(a.alpha_sets[3].values(beliefs).max(axis=1),
                               u.alpha_sets[3].values(beliefs).max(axis=1), atol=1e-9)


def test_value_grows_with_horizon_up_to_one_reward(policy):
    r_min = -100.0
    for x in np.linspace(0, 1, 101):
        for h in range(policy.horizon):
            assert policy.value([x, 1 - x], h + 1) >= policy.value([x, 1 - x], h) + GAMMA**h * r_min - 1e-9


def test_labels_every_step(policy):
    trace = read_trace(FIXTURE)
    stripped = trace.with_steps(dataclasses.replace(s, optimal_action=None) for s in trace.steps)
    labeled = exact.label_trace(stripped, policy, TigerModel())
    assert all(s.optimal_action is not None for s in labeled.steps)
    assert [s.optimal_action for s in labeled.steps] == [s.optimal_action for s in trace.steps]


def test_velocity_labels_refused(policy):
    header = TraceHeader("velreg", belief_names=("p_0", "p_1", "p_2"), created_at="")
    trace = Trace(header, [TraceStep(0, 0, 0, {"p_0": 1.0, "p_1": 0.0, "p_2": 0.0})])
    with pytest.raises(ModelMismatchError):
        exact.label_trace(trace, policy, TigerModel())


def test_policy_json_round_trip(policy, tmp_path):
    policy.save(tmp_path / "p.json")
    loaded = ExactPolicy.load(tmp_path / "p.json")
    b = np.linspace(0, 1, 51)
    for x in b:
        assert exact.optimal_action(loaded, [x, 1 - x]) == exact.optimal_action(policy, [x, 1 - x])


def test_state_guard():
    big = dataclasses.replace(TigerModel().tabular())
    big = dataclasses.replace(big, transition=np.zeros((3, 17, 17)))
    with pytest.raises(ModelMismatchError):
        exact.solve(big, 1, GAMMA)
