import numpy as np
import pytest

from conftest import shapley_values, solve_matrix_game
from nshsvi import beliefs as bel
from nshsvi import fixtures as F
from nshsvi import geometry as geo
from nshsvi import lower
from nshsvi import model as mdl


def toy():
    return mdl.from_dict(F.matrix_game([[1.0, -1.0], [-1.0, 1.0]]))


def point(m, x=0.5):
    return bel.make_belief(m, 0, [[x]], [1.0])


def test_initial_set_is_constant_lower_bound():
    m = toy()
    g = lower.init_gamma(m)
    assert len(g) == 1
    assert g.lower == pytest.approx(-2.0)
    assert lower.evaluate(g, point(m)) == pytest.approx(-2.0)


def test_evaluate_picks_best_alpha():
    m = mdl.from_dict(F.matrix_game([[1.0]]))
    fcp = geo.Fcp(((0, geo.box([0], [0.5])), (0, geo.box([0.5], [1]))))
    g = lower.GammaSet([lower.constant_alpha(m, 1.0),
                        geo.PwcFunction(fcp, (0.0, 4.0))], 0.0)
    b = bel.make_belief(m, 0, [[0.25], [0.75]], [0.5, 0.5])
    assert g.evaluate(b) == (pytest.approx(2.0), 1)
    b = bel.make_belief(m, 0, [[0.25], [0.75]], [0.9, 0.1])
    assert g.evaluate(b) == (pytest.approx(1.0), 0)


def test_matching_pennies_zero_continuation():
    m = toy()
    g = lower.GammaSet([lower.constant_alpha(m, 0.0)], -2.0)
    st = lower.stage_game_lb(m, g, point(m))
    assert st.value == pytest.approx(0.0, abs=1e-9)
    assert st.u1 == pytest.approx([0.5, 0.5])
    assert st.u2[0] == pytest.approx([0.5, 0.5])


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("backend", ["highs", "simplex"])
def test_stage_value_matches_matrix_oracle(seed, backend):
    rng = np.random.default_rng(seed)
    R = rng.integers(-4, 5, size=(3, 3)).astype(float)
    m = mdl.from_dict(F.matrix_game(R.tolist(), beta=0.6))
    g = lower.init_gamma(m)
    st = lower.stage_game_lb(m, g, point(m), explicit_dual=True, backend=backend)
    want = solve_matrix_game(R)[0] + 0.6 * g.lower
    assert st.value == pytest.approx(want, abs=1e-9)
    assert st.dual_value == pytest.approx(want, abs=1e-9)
    # the extracted strategies are optimal in the one-shot game
    assert np.min(st.u1 @ R) == pytest.approx(want - 0.6 * g.lower, abs=1e-9)
    assert np.max(R @ st.u2[0]) == pytest.approx(want - 0.6 * g.lower, abs=1e-9)


def test_ispp_matches_pointwise_backup(rng):
    m = mdl.from_dict(F.random_model(2))
    g = lower.init_gamma(m)
    for _ in range(3):
        b = F.random_belief(m, rng, n=3)
        lower.point_update_lb(m, g, b)
    b = F.random_belief(m, rng, n=3)
    st = lower.stage_game_lb(m, g, b)
    alpha = lower.backup_alpha(m, g, st)
    for s, cell in alpha.fcp.regions:
        if s != b.s1:
            continue
        k = alpha.fcp.regions.index((s, cell))
        for x in geo.sample_uniform(cell, 30, rng):
            assert alpha.values[k] == pytest.approx(lower.f_value(m, g, st, s, x), abs=1e-9)


def test_backup_is_tight_and_monotone(rng):
    m = mdl.from_dict(F.random_model(4))
    g = lower.init_gamma(m)
    probes = [F.random_belief(m, rng, n=2) for _ in range(10)]
    before = [lower.evaluate(g, p) for p in probes]
    for _ in range(4):
        b = F.random_belief(m, rng, n=3)
        st = lower.stage_game_lb(m, g, b)
        lower.point_update_lb(m, g, b, st)
        assert lower.evaluate(g, b) >= st.value - 1e-9
        after = [lower.evaluate(g, p) for p in probes]
        assert all(a >= c - 1e-12 for a, c in zip(after, before))
        before = after


def test_lower_bound_below_shapley_value(rng):
    d = F.corridor_model(n_cells=3, beta=0.8)
    m = mdl.from_dict(d)
    V = shapley_values(d)
    g = lower.init_gamma(m)
    for _ in range(6):
        k = int(rng.integers(3))
        lower.point_update_lb(m, g, bel.make_belief(m, k, [[k + 0.5]], [1.0]))
    for k in range(3):
        b = bel.make_belief(m, k, [[k + 0.3]], [1.0])
        assert lower.evaluate(g, b) <= V[k] + 1e-9


def test_regions_without_mass_keep_lower_bound():
    m = mdl.from_dict(F.threshold_model())
    g = lower.init_gamma(m)
    b = bel.belief_from_json(m, m.initial_belief)
    alpha = lower.backup_alpha(m, g, lower.stage_game_lb(m, g, b))
    high = m.state_index(["only", "high"])
    assert alpha.value(high, [0.9]) == g.lower


def test_alpha_json_round_trip():
    m = toy()
    g = lower.init_gamma(m)
    alpha = lower.point_update_lb(m, g, point(m))
    fcp, vals = geo.fcp_from_json(lower.alpha_to_json(alpha), 1)
    assert list(vals) == pytest.approx(list(alpha.values))
