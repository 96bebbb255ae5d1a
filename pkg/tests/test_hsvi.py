import numpy as np
import pytest

from conftest import shapley_values
from nshsvi import beliefs as bel
from nshsvi import fixtures as F
from nshsvi import hsvi
from nshsvi import model as mdl
from nshsvi.errors import LimitReached


def test_rho_recurrence():
    cfg = hsvi.HsviConfig(epsilon=0.1, epsilon_bar=1e-4)
    assert hsvi.rho(0, cfg, 0.0, 100.0, 0.7) == 0.1
    assert hsvi.rho(1, cfg, 0.0, 100.0, 0.7) == pytest.approx(0.1142857, abs=1e-7)


def test_rho_strictly_increasing():
    cfg = hsvi.HsviConfig(epsilon=0.1)
    r = [hsvi.rho(t, cfg, -5.0, 5.0, 0.9) for t in range(51)]
    assert all(b > a for a, b in zip(r, r[1:]))


def test_t_max_is_first_depth_reaching_spread():
    cfg = hsvi.HsviConfig(epsilon=0.5)
    T = hsvi.t_max(cfg, 0.0, 10.0, 0.9)
    assert hsvi.rho(T, cfg, 0.0, 10.0, 0.9) >= 10.0
    assert hsvi.rho(T - 1, cfg, 0.0, 10.0, 0.9) < 10.0


def test_epsilon_bar_interval_checked():
    with pytest.raises(ValueError):
        hsvi.HsviConfig(epsilon=0.1, epsilon_bar=1.0).check(10.0, 0.9)
    with pytest.raises(ValueError):
        hsvi.HsviConfig(epsilon=-1.0).check(10.0, 0.9)
    hsvi.HsviConfig(epsilon=0.1).check(10.0, 0.9)


def test_zero_reward_converges_immediately():
    m = mdl.from_dict(F.zero_reward_model())
    b0 = bel.belief_from_json(m, m.initial_belief)
    res = hsvi.solve(m, b0, hsvi.HsviConfig(epsilon=0.1))
    assert res.status == "converged"
    assert res.lb == 0.0 and res.ub == 0.0
    assert len(res.trace) == 1


def test_single_pair_is_selected():
    m = mdl.from_dict(F.matrix_game([[1.0]]))
    s = hsvi.Solver(m, hsvi.HsviConfig(epsilon=0.1))
    b = bel.make_belief(m, 0, [[0.5]], [1.0])
    a1, sn, score, nb = s.select_pair(b, 0, np.array([1.0]), np.array([[1.0]]))
    assert (a1, sn) == (0, 0)


def test_select_pair_matches_exhaustive_scoring():
    m = mdl.from_dict(F.corridor_model(n_cells=3, beta=0.8))
    s = hsvi.Solver(m, hsvi.HsviConfig(epsilon=0.05))
    b = bel.make_belief(m, 1, [[1.5]], [1.0])
    s.update(b)
    u1 = np.array([0.3, 0.7])
    u2 = np.array([[0.6, 0.4]])
    # brute force: every (a1, a2, outcome) contributes to its (a1, s1') bucket
    buckets = {}
    for a1 in range(2):
        for a2 in range(2):
            for sn, xn, pr in m.successors(1, b.points[0], a1, a2):
                pts, ws = buckets.setdefault((a1, sn), ([], []))
                pts.append(xn)
                ws.append(u2[0, a2] * pr)
    scores = {}
    for (a1, sn), (pts, ws) in buckets.items():
        nb = bel.make_belief(m, sn, np.array(pts), np.array(ws), check=False)
        scores[(a1, sn)] = u1[a1] * sum(ws) * s.excess(nb, 1)
    best = max(sorted(scores), key=lambda k: scores[k])
    a1, sn, score, _ = s.select_pair(b, 0, u1, u2)
    assert (a1, sn) == best
    assert score == pytest.approx(scores[best], abs=1e-12)


def test_zero_probability_pair_never_chosen():
    m = mdl.from_dict(F.corridor_model(n_cells=3, beta=0.8))
    s = hsvi.Solver(m, hsvi.HsviConfig(epsilon=0.05))
    b = bel.make_belief(m, 1, [[1.5]], [1.0])
    a1, _, _, _ = s.select_pair(b, 0, np.array([0.0, 1.0]), np.array([[0.5, 0.5]]))
    assert a1 == 1


def test_two_cell_corridor_matches_shapley():
    d = F.corridor_model(n_cells=2, beta=0.8)
    m = mdl.from_dict(d)
    V = shapley_values(d)
    b0 = bel.make_belief(m, 0, [[0.5]], [1.0])
    res = hsvi.solve(m, b0, hsvi.HsviConfig(epsilon=0.05, max_seconds=60))
    assert res.status == "converged"
    assert abs(res.lb - V[0]) <= 0.05 and abs(res.ub - V[0]) <= 0.05
    assert res.lb <= V[0] + 1e-9 <= res.ub + 2e-9


def test_trace_monotone_and_deterministic():
    d = F.corridor_model(n_cells=2, beta=0.8)
    m = mdl.from_dict(d)
    b0 = bel.make_belief(m, 0, [[0.5]], [1.0])
    cfg = dict(epsilon=0.2, max_seconds=60)
    r1 = hsvi.solve(m, b0, hsvi.HsviConfig(**cfg))
    r2 = hsvi.solve(mdl.from_dict(d), b0, hsvi.HsviConfig(**cfg))
    lbs = [t.lb for t in r1.trace]
    ubs = [t.ub for t in r1.trace]
    assert all(b >= a - 1e-12 for a, b in zip(lbs, lbs[1:]))
    assert all(b <= a + 1e-12 for a, b in zip(ubs, ubs[1:]))
    strip = [(t.iter, t.lb, t.ub, t.gamma_size, t.upsilon_size) for t in r1.trace]
    assert strip == [(t.iter, t.lb, t.ub, t.gamma_size, t.upsilon_size) for t in r2.trace]
    assert r1.stats["max_depth"] <= r1.stats["t_max"]


def test_iteration_limit_carries_partial_result():
    m = mdl.from_dict(F.corridor_model(n_cells=3, beta=0.8))
    b0 = bel.make_belief(m, 0, [[0.5]], [1.0])
    with pytest.raises(LimitReached) as info:
        hsvi.solve(m, b0, hsvi.HsviConfig(epsilon=1e-3, max_iterations=1))
    res = info.value.result
    assert res.status == "limit" and res.iterations == 1 and len(res.trace) == 2
    res = hsvi.solve(m, b0, hsvi.HsviConfig(epsilon=1e-3, max_iterations=1), raise_on_limit=False)
    assert res.lb <= res.ub


def test_trace_csv_columns():
    m = mdl.from_dict(F.zero_reward_model())
    res = hsvi.solve(m, bel.belief_from_json(m, m.initial_belief))
    text = hsvi.trace_to_csv(res.trace)
    assert text.splitlines()[0] == "iter,lb,ub,gamma_size,upsilon_size,seconds"
    assert text.splitlines()[1].startswith("0,0,0,1,")
