import itertools

import numpy as np
import pytest

from nshsvi import beliefs as bel
from nshsvi import fixtures as F

# filled by test_acceptance; printed at the end of the run
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def load_fixture(name, **kw):
    return F.build(name, **kw)


def initial_belief(model):
    return bel.belief_from_json(model, model.initial_belief)


def solve_matrix_game(A):
    """Value and optimal row mix of a zero-sum matrix game (row player maximises).

    Brute force over square sub-games (support enumeration); independent of
    the package's LP code.
    """
    A = np.asarray(A, float)
    m, n = A.shape
    best = None
    for k in range(1, min(m, n) + 1):
        for rows in itertools.combinations(range(m), k):
            for cols in itertools.combinations(range(n), k):
                sub = A[np.ix_(rows, cols)]
                # p^T sub = v 1, sum p = 1
                M = np.zeros((k + 1, k + 1))
                M[:k, :k] = sub.T
                M[:k, k] = -1.0
                M[k, :k] = 1.0
                rhs = np.zeros(k + 1)
                rhs[k] = 1.0
                try:
                    sol = np.linalg.solve(M, rhs)
                except np.linalg.LinAlgError:
                    continue
                p_sub, v = sol[:k], sol[k]
                if np.any(p_sub < -1e-12):
                    continue
                p = np.zeros(m)
                p[list(rows)] = p_sub
                if np.min(p @ A) < v - 1e-9:
                    continue
                if best is None or v > best[0] + 1e-12:
                    best = (v, p)
    return best


def shapley_values(model_dict, tol=1e-8):
    """Value iteration on the finite game behind a corridor fixture dict.

    The corridor rules are re-derived here from the dict (pushes add up,
    moves past a wall are blocked, the second branch weight is the slip
    probability) so the oracle shares no transition code with the package.
    """
    d = model_dict
    n = len(d["percepts"])
    beta = d["beta"]
    slip = d["env_delta"][1]["weight"] if len(d["env_delta"]) > 1 else 0.0
    push = {"L": -1, "R": 1}
    acts1, acts2 = d["actions1"], d["actions2"]
    R = {(r["a1"], r["a2"]): [g["value"] for g in r["regions"]] for r in d["rewards"]}
    V = np.zeros(n)
    while True:
        Vn = np.zeros(n)
        for k in range(n):
            A = np.zeros((len(acts1), len(acts2)))
            for i, a1 in enumerate(acts1):
                for j, a2 in enumerate(acts2):
                    t = k + push[a1] + push[a2]
                    t = t if 0 <= t < n else k
                    A[i, j] = R[(a1, a2)][k] + beta * ((1 - slip) * V[t] + slip * V[k])
            Vn[k] = solve_matrix_game(A)[0]
        if np.max(np.abs(Vn - V)) < tol * (1 - beta):
            return Vn
        V = Vn
