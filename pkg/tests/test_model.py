import copy
import json

import numpy as np
import pytest

from nshsvi import fixtures as F
from nshsvi import model as mdl
from nshsvi.errors import IncompatibleState, ModelError


@pytest.mark.parametrize("name", ["toy.json", "threshold.json", "zero_reward.json", "corridor.json",
                                  "corridor_pursuit.json", "pursuit_evasion.json",
                                  "pedestrian_vehicle.json"])
def test_bundled_models_validate(name):
    assert mdl.validate(mdl.load(F.data_path(name))) == []


def test_branch_weights_must_sum_to_one():
    d = F.matrix_game([[1.0]])
    d["env_delta"] = [dict(d["env_delta"][0], weight=0.5), dict(d["env_delta"][0], weight=0.4)]
    issues = mdl.validate(mdl.from_dict(d))
    assert any(i.startswith("branch weights") for i in issues)


def test_missing_dynamics_cell_reported():
    d = F.threshold_model()
    d["env_delta"][0]["pieces"][0]["cells"] = [{"box": [[0.0], [0.6]]}]
    issues = mdl.validate(mdl.from_dict(d))
    assert any(i.startswith("coverage") for i in issues)


def test_missing_reward_region_reported():
    d = F.corridor_model()
    d["rewards"][0]["regions"] = d["rewards"][0]["regions"][:-1]
    issues = mdl.validate(mdl.from_dict(d))
    assert any(i.startswith("coverage") for i in issues)


def test_discount_out_of_range():
    issues = mdl.validate(mdl.from_dict(F.matrix_game([[1.0]], beta=1.0)))
    assert any(i.startswith("discount") for i in issues)


def test_unknown_network_is_model_error():
    d = F.threshold_model()
    d["classifiers"] = {"only": "nope"}
    with pytest.raises(ModelError):
        mdl.from_dict(d)


def test_malformed_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{ not json")
    with pytest.raises(ModelError):
        mdl.load(str(p))
    p.write_text(json.dumps({"locals": []}))
    with pytest.raises(ModelError):
        mdl.load(str(p))


def test_identical_successors_merge():
    d = F.matrix_game([[1.0]])
    d["env_delta"] = [dict(d["env_delta"][0], weight=0.5), dict(d["env_delta"][0], weight=0.5)]
    m = mdl.from_dict(d)
    succ = m.successors(0, [0.3], 0, 0)
    assert len(succ) == 1
    s, x, p = succ[0]
    assert s == 0 and x == pytest.approx([0.3]) and p == pytest.approx(1.0)


def test_successors_distribution_sums_to_one(rng):
    m = mdl.from_dict(F.random_model(3))
    for _ in range(50):
        b = F.random_belief(m, rng, n=1)
        for a1 in range(m.n_a1):
            for a2 in range(m.n_a2):
                total = sum(p for _, _, p in m.successors(b.s1, b.points[0], a1, a2))
                assert total == pytest.approx(1.0, abs=1e-12)


def test_successor_rejects_incompatible_point():
    m = mdl.from_dict(F.threshold_model())
    low = m.state_index(["only", "low"])
    with pytest.raises(IncompatibleState):
        m.successors(low, [0.9], 0, 0)


def test_corridor_moves_are_blocked_at_walls():
    m = mdl.from_dict(F.corridor_model(n_cells=3, slip=0.0))
    s0 = m.state_index(["only", "c0"])
    succ = m.successors(s0, [0.5], 0, 0)            # both push left at the wall
    assert [x[0] for _, x, _ in succ] == pytest.approx([0.5])
    succ = m.successors(s0, [0.5], 1, 1)            # both push right: +2 cells
    assert [x[0] for _, x, _ in succ] == pytest.approx([2.5])


def test_pedestrian_rewards():
    m = mdl.from_dict(F.pedestrian_model())
    s = m.state_index(["30", "very_likely"])
    assert m.reward(s, [4.0, 9.0, 0.2, 1.0], 0, 0) == -200.0
    assert m.reward(s, [4.0, 9.0, 3.4, 9.5], 0, 0) == 0.0
    lo, hi = m.value_bounds()
    assert lo == pytest.approx(-666.6666666, rel=1e-8) and hi == 0.0


def test_pursuit_capture_reward():
    m = mdl.from_dict(F.grid_pursuit_model())
    s = m.state_index(["none", "cell_11"])
    assert m.reward(s, [0.5, 0.5, 0.5, 0.5], 0, 0) == 100.0
    assert m.reward(s, [0.5, 0.5, 2.5, 2.5], 0, 0) == 0.0
    assert m.value_bounds()[1] == pytest.approx(100 / 0.3)


def test_value_bounds_matrix_game():
    m = mdl.from_dict(F.matrix_game([[1.0, -3.0], [2.0, 0.5]], beta=0.75))
    assert m.value_bounds() == pytest.approx((-12.0, 8.0))
    assert m.max_abs_reward() == 3.0


def test_source_dict_is_not_mutated():
    d = F.corridor_model()
    before = copy.deepcopy(d)
    mdl.validate(mdl.from_dict(d))
    assert d == before
