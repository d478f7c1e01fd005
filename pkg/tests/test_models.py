import json

import numpy as np
import pytest

from xpomcp.models import ContractError, TigerModel, VelocityRegulationModel, load_model_config, make_model
from xpomcp.models.tiger import HEAR_LEFT, LISTEN, TIGER_LEFT
from xpomcp.models.velreg import COLLISION, OCCUPANCY, STRIDE


def test_tiger_listen_accuracy():
    model = TigerModel()
    rng = np.random.default_rng(1)
    hits = sum(model.step(TIGER_LEFT, LISTEN, rng).observation == HEAR_LEFT for _ in range(20000))
    assert abs(hits / 20000 - 0.85) < 0.01


def test_tiger_open_terminates():
    model = TigerModel()
    rng = np.random.default_rng(0)
    res = model.step(TIGER_LEFT, 1, rng)
    assert res.terminal and res.reward == -100.0
    assert model.step(TIGER_LEFT, 2, rng).reward == 10.0


def test_tiger_projection_is_treasure_side():
    model = TigerModel()
    b = model.belief_projection(np.array([TIGER_LEFT] * 3 + [1]))
    assert b == {"p_left": 0.25, "p_right": 0.75}


def test_invalid_action_rejected():
    with pytest.raises(ContractError):
        TigerModel().step(0, 3, np.random.default_rng(0))


def _velreg_state(model, difficulty, position):
    seg = model.segment_of[position]
    diffs = [0] * 8
    diffs[seg] = difficulty
    return model.encode(diffs, position)


@pytest.mark.parametrize("difficulty", [0, 1, 2])
@pytest.mark.parametrize("speed", [0, 1, 2])
def test_velreg_collision_rates(difficulty, speed):
    model = VelocityRegulationModel()
    rng = np.random.default_rng(difficulty * 3 + speed)
    state = _velreg_state(model, difficulty, 0)
    n = 20000
    hits = sum(model.step(state, speed, rng).reward < -50 for _ in range(n))
    assert abs(hits / n - COLLISION[difficulty][speed]) < 0.01


@pytest.mark.parametrize("difficulty", [0, 1, 2])
def test_velreg_occupancy_observation(difficulty):
    model = VelocityRegulationModel()
    rng = np.random.default_rng(10 + difficulty)
    # position 0 -> 1 stays in segment 0
    state = _velreg_state(model, difficulty, 0)
    n = 20000
    ones = sum(model.step(state, 0, rng).observation == 1 for _ in range(n))
    assert abs(ones / n - OCCUPANCY[difficulty]) < 0.01


def test_velreg_projection():
    model = VelocityRegulationModel()
    point = np.full(10, model.encode([0, 0, 0, 0, 0, 0, 0, 0], 0))
    assert model.belief_projection(point) == {"p_0": 1.0, "p_1": 0.0, "p_2": 0.0}
    rng = np.random.default_rng(0)
    codes = rng.integers(0, 3**8, size=60000)
    b = model.belief_projection(codes * STRIDE + 12)
    assert sum(b.values()) == pytest.approx(1.0, abs=1e-9)
    assert all(abs(v - 1 / 3) < 0.01 for v in b.values())


def test_velreg_runs_end():
    model = VelocityRegulationModel()
    assert model.horizon == 35
    state = model.encode([0] * 8, 34)
    assert model.step(state, 0, np.random.default_rng(0)).terminal


def test_config_round_trip(tmp_path):
    for model in (TigerModel(), VelocityRegulationModel()):
        path = tmp_path / f"{model.model_id}.json"
        path.write_text(json.dumps({"model": model.model_id, **model.to_config()}))
        assert load_model_config(path).params_hash() == model.params_hash()


def test_toml_config(tmp_path):
    path = tmp_path / "t.toml"
    path.write_text('model = "tiger"\nhear_accuracy = 0.7\n')
    assert load_model_config(path).hear_accuracy == 0.7


def test_unknown_config_key():
    with pytest.raises(ValueError):
        make_model("tiger", {"hear_acc": 0.7})
    with pytest.raises(ValueError):
        make_model("maze")
