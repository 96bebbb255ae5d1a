"""Linear programs: construction, solving and dual extraction.

Two backends share one contract:

* ``"highs"`` drives the HiGHS dual simplex directly (single threaded, deterministic).
* ``"simplex"`` is a dense two-phase tableau simplex (Dantzig pricing,
  Bland's rule while degenerate).

Dual values are reported as the derivative of the optimal objective with
respect to each constraint's right-hand side, in the instance's own sense.
For ``max x s.t. x <= 3`` the dual of the constraint is 1.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import highspy
import numpy as np
import scipy.sparse as sp

from .errors import NumericalFailure

log = logging.getLogger(__name__)

FEAS_TOL = 1e-9
GAP_TOL = 1e-6

LE, EQ, GE = "<=", "=", ">="
_SENSES = (LE, EQ, GE)

OPTIMAL, INFEASIBLE, UNBOUNDED = "optimal", "infeasible", "unbounded"

_default_backend = "highs"
_dump_dir: Optional[str] = None
_dump_counter = 0


def set_default_backend(name: str) -> None:
    global _default_backend
    if name not in ("highs", "simplex"):
        raise ValueError(f"unknown LP backend {name!r}")
    _default_backend = name


def set_dump_dir(path: Optional[str]) -> None:
    """Write every solved LP to ``path`` in CPLEX LP text format (None disables)."""
    global _dump_dir, _dump_counter
    _dump_dir = path
    _dump_counter = 0
    if path:
        os.makedirs(path, exist_ok=True)


@dataclass(frozen=True)
class LpInstance:
    maximize: bool
    c: np.ndarray
    A: sp.csr_matrix
    senses: tuple
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    var_names: tuple = ()
    row_names: tuple = ()

    @property
    def n_vars(self) -> int:
        return len(self.c)

    @property
    def n_rows(self) -> int:
        return len(self.rhs)

    def check(self) -> None:
        if self.n_vars == 0:
            raise ValueError("LP needs at least one variable")
        if self.A.shape != (self.n_rows, self.n_vars):
            raise ValueError("constraint matrix shape mismatch")
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.rhs))
                and np.all(np.isfinite(self.A.data))):
            raise ValueError("non-finite LP coefficient")
        if any(s not in _SENSES for s in self.senses):
            raise ValueError("bad constraint relation")


@dataclass
class LpSolution:
    status: str
    objective: float = float("nan")
    x: Optional[np.ndarray] = None
    duals: Optional[np.ndarray] = None
    dual_objective: float = float("nan")

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class LpBuilder:
    """Incremental LP construction with named variables and rows."""

    def __init__(self, maximize: bool = False):
        self.maximize = maximize
        self._names: list[str] = []
        self._lo: list[float] = []
        self._hi: list[float] = []
        self._obj: dict[int, float] = {}
        self._rows_i: list[int] = []
        self._cols: list[int] = []
        self._vals: list[float] = []
        self._senses: list[str] = []
        self._rhs: list[float] = []
        self._row_names: list[str] = []

    def var(self, name: str = "", lo: float = 0.0, hi: float = np.inf, obj: float = 0.0) -> int:
        j = len(self._names)
        self._names.append(name or f"x{j}")
        self._lo.append(lo)
        self._hi.append(hi)
        if obj:
            self._obj[j] = self._obj.get(j, 0.0) + obj
        return j

    def free_var(self, name: str = "", obj: float = 0.0) -> int:
        return self.var(name, -np.inf, np.inf, obj)

    def set_obj(self, j: int, coef: float) -> None:
        self._obj[j] = coef

    def add(self, coeffs, sense: str, rhs: float, name: str = "") -> int:
        """Add a row. ``coeffs`` is a mapping or iterable of (var, coef)."""
        if sense not in _SENSES:
            raise ValueError(sense)
        i = len(self._rhs)
        items = coeffs.items() if hasattr(coeffs, "items") else coeffs
        for j, v in items:
            if v != 0.0:
                self._rows_i.append(i)
                self._cols.append(j)
                self._vals.append(float(v))
        self._senses.append(sense)
        self._rhs.append(float(rhs))
        self._row_names.append(name or f"r{i}")
        return i

    @property
    def n_vars(self) -> int:
        return len(self._names)

    def build(self) -> LpInstance:
        n = len(self._names)
        m = len(self._rhs)
        # duplicate (row, col) entries are summed by the COO -> CSR conversion
        A = sp.coo_matrix((self._vals, (self._rows_i, self._cols)), shape=(m, n)).tocsr()
        c = np.zeros(n)
        for j, v in self._obj.items():
            c[j] = v
        lp = LpInstance(self.maximize, c, A, tuple(self._senses), np.array(self._rhs, float),
                        np.array(self._lo, float), np.array(self._hi, float),
                        tuple(self._names), tuple(self._row_names))
        return lp


def dual_objective(lp: LpInstance, y: np.ndarray) -> float:
    """Lagrangian dual bound for multipliers ``y`` (d objective / d rhs convention)."""
    r = lp.c - lp.A.T @ y
    total = float(lp.rhs @ y)
    for k, rk in enumerate(r):
        if abs(rk) <= FEAS_TOL:
            continue
        # max problems take the sup of r*x over the box, min problems the inf
        want_hi = (rk > 0) == lp.maximize
        bound = lp.upper[k] if want_hi else lp.lower[k]
        if not np.isfinite(bound):
            return np.inf if lp.maximize else -np.inf
        total += rk * bound
    return total


def solve(lp: LpInstance, backend: Optional[str] = None) -> LpSolution:
    lp.check()
    backend = backend or _default_backend
    if _dump_dir:
        _dump(lp)
    if backend == "highs":
        sol = _solve_highs(lp)
    elif backend == "simplex":
        sol = _solve_simplex(lp)
    else:
        raise ValueError(f"unknown LP backend {backend!r}")
    if sol.optimal:
        sol.dual_objective = dual_objective(lp, sol.duals)
        gap = abs(sol.objective - sol.dual_objective)
        if gap > GAP_TOL * (1.0 + abs(sol.objective)):
            log.warning("LP duality gap %.3g (objective %.6g)", gap, sol.objective)
    return sol


def solve_dense(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=None,
                maximize=False) -> LpSolution:
    """Small dense LP used by the geometry routines (no dual extraction)."""
    c = np.asarray(c, float)
    n = len(c)
    blocks, lo, hi = [], [], []
    if A_ub is not None and len(b_ub):
        blocks.append(np.atleast_2d(np.asarray(A_ub, float)))
        lo.append(np.full(len(b_ub), -np.inf))
        hi.append(np.asarray(b_ub, float))
    if A_eq is not None and len(b_eq):
        blocks.append(np.atleast_2d(np.asarray(A_eq, float)))
        lo.append(np.asarray(b_eq, float))
        hi.append(np.asarray(b_eq, float))
    A = np.vstack(blocks) if blocks else np.zeros((0, n))
    if bounds is None:
        bounds = [(0.0, None)] * n
    col_lo = np.array([-np.inf if b[0] is None else b[0] for b in bounds], float)
    col_hi = np.array([np.inf if b[1] is None else b[1] for b in bounds], float)
    sign = -1.0 if maximize else 1.0
    status, obj, x, _ = _highs_run(sign * c, A,
                                   np.concatenate(lo) if lo else np.zeros(0),
                                   np.concatenate(hi) if hi else np.zeros(0), col_lo, col_hi)
    if status == OPTIMAL:
        return LpSolution(OPTIMAL, sign * obj, x)
    return LpSolution(status)


_HIGHS_OPTS = {"output_flag": False, "solver": "simplex", "simplex_strategy": 1,
               "primal_feasibility_tolerance": FEAS_TOL,
               "dual_feasibility_tolerance": FEAS_TOL, "threads": 1, "random_seed": 0}
_highs = None


def _engine():
    global _highs
    if _highs is None:
        _highs = highspy.Highs()
        for k, v in _HIGHS_OPTS.items():
            _highs.setOptionValue(k, v)
    return _highs


def _highs_run(c, A, row_lo, row_hi, col_lo, col_hi, presolve: bool = True):
    """Minimise ``c x``; returns (status, objective, x, row duals)."""
    m, n = A.shape
    inf = highspy.kHighsInf
    model = highspy.HighsLp()
    model.num_col_ = n
    model.num_row_ = m
    model.col_cost_ = np.asarray(c, float)
    model.col_lower_ = np.where(np.isfinite(col_lo), col_lo, -inf)
    model.col_upper_ = np.where(np.isfinite(col_hi), col_hi, inf)
    model.row_lower_ = np.where(np.isfinite(row_lo), row_lo, -inf)
    model.row_upper_ = np.where(np.isfinite(row_hi), row_hi, inf)
    model.a_matrix_.format_ = highspy.MatrixFormat.kColwise
    if sp.issparse(A):
        A = sp.csc_matrix(A)
        A.sort_indices()
        model.a_matrix_.start_ = A.indptr.astype(np.int32)
        model.a_matrix_.index_ = A.indices.astype(np.int32)
        model.a_matrix_.value_ = A.data.astype(float)
    else:
        # dense column-major; explicit zeros are harmless
        model.a_matrix_.start_ = (np.arange(n + 1) * m).astype(np.int32)
        model.a_matrix_.index_ = np.tile(np.arange(m, dtype=np.int32), n)
        model.a_matrix_.value_ = np.ascontiguousarray(A.T, float).ravel()
    h = _engine()
    h.clearModel()
    h.setOptionValue("presolve", "on" if presolve else "off")
    h.passModel(model)
    h.run()
    st = h.getModelStatus()
    S = highspy.HighsModelStatus
    if st == S.kOptimal:
        sol = h.getSolution()
        return (OPTIMAL, float(h.getInfo().objective_function_value),
                np.array(sol.col_value, float), np.array(sol.row_dual, float))
    if st == S.kInfeasible:
        return INFEASIBLE, None, None, None
    if st == S.kUnbounded:
        return UNBOUNDED, None, None, None
    if st == S.kUnboundedOrInfeasible and presolve:
        return _highs_run(c, A, row_lo, row_hi, col_lo, col_hi, presolve=False)
    raise NumericalFailure(f"HiGHS status {h.modelStatusToString(st)}")


def _solve_highs(lp: LpInstance) -> LpSolution:
    sign = -1.0 if lp.maximize else 1.0
    senses = np.array(lp.senses)
    row_lo = np.where(senses == LE, -np.inf, lp.rhs)
    row_hi = np.where(senses == GE, np.inf, lp.rhs)
    status, obj, x, y = _highs_run(sign * lp.c, lp.A, row_lo, row_hi, lp.lower, lp.upper)
    if status != OPTIMAL:
        return LpSolution(status)
    return LpSolution(OPTIMAL, sign * obj, x, sign * y)


# ---------------------------------------------------------------- own simplex

_PIV_TOL = 1e-11


def _solve_simplex(lp: LpInstance) -> LpSolution:
    """Two-phase tableau simplex.

    Variables are mapped to non-negative columns (shift by a finite lower
    bound, mirror when only an upper bound is finite, split when free);
    finite two-sided boxes add a row.
    """
    A0 = lp.A.toarray()
    m0, n0 = A0.shape
    sign = -1.0 if lp.maximize else 1.0
    cols = []      # (orig var, factor)
    shift = np.zeros(n0)
    extra_rows = []
    for j in range(n0):
        lo, hi = lp.lower[j], lp.upper[j]
        if np.isfinite(lo):
            shift[j] = lo
            cols.append((j, 1.0))
            if np.isfinite(hi):
                extra_rows.append((len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            shift[j] = hi
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    n = len(cols)
    T = np.zeros((m0 + len(extra_rows), n))
    for k, (j, f) in enumerate(cols):
        T[:m0, k] = A0[:, j] * f
    b = lp.rhs - A0 @ shift
    senses = list(lp.senses)
    for r, (k, width) in enumerate(extra_rows):
        T[m0 + r, k] = 1.0
        b = np.append(b, width)
        senses.append(LE)
    cost = np.array([sign * lp.c[j] * f for j, f in cols])
    m = T.shape[0]

    # slack / surplus columns
    slack_cols = []
    for i, s in enumerate(senses):
        if s == EQ:
            continue
        col = np.zeros(m)
        col[i] = 1.0 if s == LE else -1.0
        slack_cols.append(col)
    S = np.array(slack_cols).T if slack_cols else np.zeros((m, 0))
    rowsign = np.where(b < 0, -1.0, 1.0)
    Afull = np.hstack([T, S]) * rowsign[:, None]
    bfull = b * rowsign
    nx = Afull.shape[1]
    # artificial columns form the identity, so they carry B^-1 through pivots
    tab = np.hstack([Afull, np.eye(m), bfull[:, None]])
    basis = list(range(nx, nx + m))

    c1 = np.concatenate([np.zeros(nx), np.ones(m)])
    orig = tab.copy()
    status = _simplex_phase(tab, basis, c1, allowed=nx + m, orig=orig)
    if status != OPTIMAL:
        raise NumericalFailure("phase one did not terminate")
    if tab[:, -1] @ c1[basis] > 1e-8 * (1 + np.abs(bfull).max(initial=0.0)):
        return LpSolution(INFEASIBLE)
    # drive zero-level artificials out of the basis where possible
    for r in range(m):
        if basis[r] >= nx:
            piv = np.flatnonzero(np.abs(tab[r, :nx]) > 1e-9)
            if len(piv):
                _pivot(tab, basis, r, piv[0])
    c2 = np.concatenate([cost, np.zeros(S.shape[1]), np.zeros(m)])
    status = _simplex_phase(tab, basis, c2, allowed=nx, orig=orig)
    if status == UNBOUNDED:
        return LpSolution(UNBOUNDED)
    xs = np.zeros(nx + m)
    xs[basis] = tab[:, -1]
    x = shift.copy()
    for k, (j, f) in enumerate(cols):
        x[j] += f * xs[k]
    cb = c2[basis]
    y = cb @ tab[:, nx:nx + m]          # c_B B^-1
    y = y * rowsign
    duals = sign * y[:m0]
    obj = float(lp.c @ x)
    return LpSolution(OPTIMAL, obj, x, duals)


def _pivot(tab, basis, r, k):
    tab[r] /= tab[r, k]
    col = tab[:, k].copy()
    col[r] = 0.0
    tab -= np.outer(col, tab[r])
    basis[r] = k


def _refactor(tab, basis, orig):
    """Rebuild the tableau from the original rows to shed accumulated round-off."""
    B = orig[:, basis]
    tab[:] = np.linalg.solve(B, orig)


def _simplex_phase(tab, basis, cost, allowed, orig=None):
    """Dantzig pricing; Bland's entering rule during long degenerate runs.

    The leaving row is the largest pivot among ratio-test ties, and the
    tableau is refactorised from ``orig`` every few dozen pivots.
    """
    m = tab.shape[0]
    tol = 1e-10 * (1.0 + np.abs(cost).max(initial=0.0))
    stall = 0
    for it in range(50000):
        if orig is not None and it and it % 50 == 0:
            _refactor(tab, basis, orig)
        cb = cost[basis]
        red = cost[:allowed] - cb @ tab[:, :allowed]
        enter = np.flatnonzero(red < -tol)
        if not len(enter):
            return OPTIMAL
        k = enter[0] if stall > 20 else enter[np.argmin(red[enter])]
        colk = tab[:, k]
        piv_tol = max(_PIV_TOL, 1e-9 * np.abs(colk).max())
        pos = np.flatnonzero(colk > piv_tol)
        if not len(pos):
            return UNBOUNDED
        rhs = np.maximum(tab[pos, -1], 0.0)
        ratios = rhs / colk[pos]
        best = ratios.min()
        ties = pos[ratios <= best + 1e-9 * (1 + abs(best))]
        if stall > 20:
            r = min(ties, key=lambda i: basis[i])
        else:
            r = ties[np.argmax(colk[ties])]
        stall = stall + 1 if best <= 1e-12 else 0
        _pivot(tab, basis, r, k)
    raise NumericalFailure(f"simplex iteration limit ({m} rows)")


# ---------------------------------------------------------------- LP text dump

def write_lp_text(lp: LpInstance, path: str) -> None:
    """Write the instance in CPLEX LP format."""
    def term(coef, name):
        return f"{'+' if coef >= 0 else '-'} {abs(coef):.17g} {name}"

    names = lp.var_names or tuple(f"x{j}" for j in range(lp.n_vars))
    lines = ["Maximize" if lp.maximize else "Minimize"]
    obj = " ".join(term(v, names[j]) for j, v in enumerate(lp.c) if v != 0.0)
    lines.append(" obj: " + (obj or f"0 {names[0]}"))
    lines.append("Subject To")
    A = lp.A.tocsr()
    for i in range(lp.n_rows):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        body = " ".join(term(v, names[j]) for j, v in zip(A.indices[lo:hi], A.data[lo:hi]))
        rname = lp.row_names[i] if lp.row_names else f"r{i}"
        lines.append(f" {rname}: {body or '0 ' + names[0]} {lp.senses[i]} {lp.rhs[i]:.17g}")
    lines.append("Bounds")
    for j, nm in enumerate(names):
        lo, hi = lp.lower[j], lp.upper[j]
        if not np.isfinite(lo) and not np.isfinite(hi):
            lines.append(f" {nm} free")
        elif lo != 0.0 or np.isfinite(hi):
            lo_s = f"{lo:.17g}" if np.isfinite(lo) else "-inf"
            hi_s = f"{hi:.17g}" if np.isfinite(hi) else "+inf"
            lines.append(f" {lo_s} <= {nm} <= {hi_s}")
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _dump(lp: LpInstance) -> None:
    global _dump_counter
    _dump_counter += 1
    write_lp_text(lp, os.path.join(_dump_dir, f"lp_{_dump_counter:06d}.lp"))


def from_dense(c: Sequence[float], A, senses, rhs, maximize=False, lower=None, upper=None):
    """Convenience constructor for small dense instances."""
    c = np.asarray(c, float)
    A = sp.csr_matrix(np.atleast_2d(np.asarray(A, float)))
    n = len(c)
    lo = np.zeros(n) if lower is None else np.asarray(lower, float)
    hi = np.full(n, np.inf) if upper is None else np.asarray(upper, float)
    return LpInstance(maximize, c, A, tuple(senses), np.asarray(rhs, float), lo, hi)
