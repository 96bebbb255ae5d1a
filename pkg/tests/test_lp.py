import itertools

import numpy as np
import pytest

from nshsvi import lp


def vertex_oracle(c, A, b, maximize):
    """Best objective over all vertices of {x >= 0, A x <= b} (bounded, small n)."""
    n = len(c)
    G = np.vstack([A, -np.eye(n)])
    h = np.concatenate([b, np.zeros(n)])
    best = None
    for rows in itertools.combinations(range(len(h)), n):
        M = G[list(rows)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, h[list(rows)])
        if np.all(G @ x <= h + 1e-9):
            v = float(c @ x)
            if best is None or (v > best if maximize else v < best):
                best = v
    return best


@pytest.mark.parametrize("backend", ["highs", "simplex"])
def test_small_max(backend):
    inst = lp.from_dense([1, 1], [[1, 0], [0, 1]], ["<=", "<="], [1, 1], maximize=True)
    sol = lp.solve(inst, backend)
    assert sol.optimal
    assert sol.objective == pytest.approx(2.0)
    assert sol.duals == pytest.approx([1.0, 1.0])


@pytest.mark.parametrize("backend", ["highs", "simplex"])
def test_single_bound_dual(backend):
    sol = lp.solve(lp.from_dense([1], [[1]], ["<="], [3], maximize=True), backend)
    assert sol.objective == pytest.approx(3.0)
    assert sol.duals == pytest.approx([1.0])


@pytest.mark.parametrize("backend", ["highs", "simplex"])
def test_min_with_ge_row_dual_sign(backend):
    # min 2x s.t. x >= 3: raising the rhs by one costs 2
    sol = lp.solve(lp.from_dense([2], [[1]], [">="], [3]), backend)
    assert sol.objective == pytest.approx(6.0)
    assert sol.duals == pytest.approx([2.0])


@pytest.mark.parametrize("backend", ["highs", "simplex"])
def test_infeasible(backend):
    inst = lp.from_dense([1], [[1], [1]], ["<=", ">="], [1, 2])
    assert lp.solve(inst, backend).status == lp.INFEASIBLE


@pytest.mark.parametrize("backend", ["highs", "simplex"])
def test_unbounded(backend):
    inst = lp.from_dense([1], [[-1]], ["<="], [1], maximize=True)
    assert lp.solve(inst, backend).status == lp.UNBOUNDED


@pytest.mark.parametrize("backend", ["highs", "simplex"])
def test_equality_and_free_variable(backend):
    b = lp.LpBuilder(maximize=False)
    x = b.free_var("x", obj=1.0)
    y = b.var("y", obj=1.0)
    b.add({x: 1.0, y: 1.0}, "=", 1.0)
    b.add({x: 1.0}, ">=", -2.0)
    sol = lp.solve(b.build(), backend)
    assert sol.objective == pytest.approx(1.0)
    assert sol.dual_objective == pytest.approx(sol.objective, abs=1e-9)


def test_backends_agree_with_vertex_oracle(rng):
    for _ in range(40):
        n, m = 3, 4
        A = rng.uniform(-1, 2, size=(m, n))
        A[0] = 1.0                                 # keeps the region bounded
        b = rng.uniform(0.5, 3, size=m)
        c = rng.normal(size=n)
        want = vertex_oracle(c, A, b, True)
        inst = lp.from_dense(c, A, ["<="] * m, b, maximize=True)
        for backend in ("highs", "simplex"):
            sol = lp.solve(inst, backend)
            assert sol.optimal
            assert sol.objective == pytest.approx(want, abs=1e-9)
            assert sol.dual_objective == pytest.approx(want, abs=1e-9)
            assert np.all(A @ sol.x <= b + 1e-9) and np.all(sol.x >= -1e-9)


def test_builder_sums_duplicate_entries():
    b = lp.LpBuilder(maximize=True)
    x = b.var("x", obj=1.0)
    b.add([(x, 1.0), (x, 1.0)], "<=", 4.0)
    assert lp.solve(b.build()).objective == pytest.approx(2.0)


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        lp.solve(lp.from_dense([np.nan], [[1]], ["<="], [1]))


def test_dense_helper():
    sol = lp.solve_dense([-1, -2], A_ub=[[1, 1]], b_ub=[3], bounds=[(0, 2), (0, 2)])
    assert sol.objective == pytest.approx(-5.0)
    assert lp.solve_dense([1], A_ub=[[1]], b_ub=[-1]).status == lp.INFEASIBLE


def test_lp_text_dump(tmp_path):
    inst = lp.from_dense([1, 1], [[1, 0], [0, 1]], ["<=", "<="], [1, 1], maximize=True)
    lp.set_dump_dir(str(tmp_path))
    try:
        lp.solve(inst)
    finally:
        lp.set_dump_dir(None)
    files = list(tmp_path.glob("*.lp"))
    assert len(files) == 1
    text = files[0].read_text()
    assert text.startswith("Maximize") and "Subject To" in text and text.rstrip().endswith("End")


def test_unknown_backend():
    with pytest.raises(ValueError):
        lp.set_default_backend("cplex")
