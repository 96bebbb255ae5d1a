"""Convex polytopes in H-representation and finite partitions built from them.

A polytope is the set ``{x : A x <= b}``.  Rows are scaled to unit norm on
construction so that tolerances mean distances.  An empty intersection is
reported as ``None``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.spatial import ConvexHull, HalfspaceIntersection, QhullError

from . import lp
from .errors import DegeneratePolytope, DimensionMismatch, EmptyPolytope, NoRegion

log = logging.getLogger(__name__)

TOL = 1e-9
_BIG = 1e6


class Polytope:
    """Immutable H-polytope ``A x <= b``."""

    __slots__ = ("A", "b", "degenerate", "_cheb", "_verts")

    def __init__(self, A, b, degenerate: bool = False, dim: Optional[int] = None):
        A = np.array(A, dtype=float, ndmin=2)
        b = np.array(b, dtype=float).reshape(-1)
        if A.size == 0:
            if dim is None:
                raise ValueError("dimension needed for a polytope without constraints")
            A = np.zeros((0, dim))
        if A.shape[0] != b.shape[0]:
            raise DimensionMismatch("halfspace count mismatch")
        norms = np.linalg.norm(A, axis=1)
        zero = norms < 1e-14
        if np.any(zero & (b < -TOL)):
            # 0 <= negative: keep a single infeasible row so emptiness is visible
            A = np.zeros((1, A.shape[1]))
            b = np.array([-1.0])
            norms = np.ones(1)
            zero = np.zeros(1, bool)
        keep = ~zero
        A = A[keep] / norms[keep, None]
        b = b[keep] / norms[keep]
        A.setflags(write=False)
        b.setflags(write=False)
        self.A = A
        self.b = b
        self.degenerate = bool(degenerate)
        self._cheb = None
        self._verts = None

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def n_halfspaces(self) -> int:
        return self.A.shape[0]

    def __repr__(self):
        return f"Polytope(dim={self.dim}, m={self.n_halfspaces}{', degenerate' if self.degenerate else ''})"

    def halfspaces(self) -> list:
        return [list(map(float, a)) + [float(bi)] for a, bi in zip(self.A, self.b)]

    def contains(self, x, tol: float = TOL) -> bool:
        return contains(self, x, tol)

    def chebyshev(self):
        """(center, radius) of the largest inscribed ball, or None if empty."""
        if self._cheb is None:
            self._cheb = _chebyshev(self.A, self.b)
        return self._cheb


def box(lower: Sequence[float], upper: Sequence[float]) -> Polytope:
    lo = np.asarray(lower, float)
    hi = np.asarray(upper, float)
    e = len(lo)
    A = np.vstack([np.eye(e), -np.eye(e)])
    b = np.concatenate([hi, -lo])
    return Polytope(A, b)


def whole_space(dim: int) -> Polytope:
    return Polytope(np.zeros((0, dim)), np.zeros(0), dim=dim)


def _chebyshev(A, b):
    m, e = A.shape
    if m == 0:
        return np.zeros(e), np.inf
    # variables (x, r); maximise r subject to a_i x + r <= b_i (rows are unit norm)
    Aub = np.hstack([A, np.ones((m, 1))])
    bounds = [(None, None)] * e + [(0.0, _BIG)]
    c = np.zeros(e + 1)
    c[-1] = 1.0
    sol = lp.solve_dense(c, Aub, b, bounds=bounds, maximize=True)
    if sol.status == lp.INFEASIBLE:
        return None
    if sol.status != lp.OPTIMAL:
        return np.zeros(e), np.inf
    return sol.x[:e].copy(), float(sol.x[-1])


def contains(p: Polytope, x, tol: float = TOL) -> bool:
    if tol < 0:
        raise ValueError("tol must be non-negative")
    x = np.asarray(x, float)
    if x.shape[-1] != p.dim:
        raise DimensionMismatch("point dimension")
    return bool(np.all(p.A @ x <= p.b + tol))


def violation(p: Polytope, x) -> float:
    if p.n_halfspaces == 0:
        return 0.0
    return float(max(0.0, np.max(p.A @ np.asarray(x, float) - p.b)))


def is_empty(p: Polytope) -> bool:
    return p.chebyshev() is None


def is_full_dim(p: Polytope, tol: float = TOL) -> bool:
    cb = p.chebyshev()
    return cb is not None and cb[1] > tol and not p.degenerate


def interior_point(p: Polytope) -> np.ndarray:
    cb = p.chebyshev()
    if cb is None:
        raise EmptyPolytope("polytope is empty")
    if cb[1] <= TOL or p.degenerate:
        raise DegeneratePolytope("polytope has no interior")
    return cb[0]


def _dedupe(A, b):
    """Drop rows that repeat an earlier normal, keeping the tightest offset."""
    keep: list[int] = []
    out_b = b.copy()
    for i in range(len(b)):
        for k in keep:
            if np.max(np.abs(A[k] - A[i])) <= 1e-12:
                out_b[k] = min(out_b[k], b[i])
                break
        else:
            keep.append(i)
    return A[keep], out_b[keep]


def remove_redundant(p: Polytope) -> Polytope:
    """Drop implied half-spaces, keeping the remaining ones in insertion order."""
    A, b = _dedupe(p.A, p.b)
    cb = p.chebyshev()
    if cb is None:
        return Polytope(A, b, p.degenerate, dim=p.dim)
    center, radius = cb
    e = p.dim
    keep = None
    if e == 1:
        up = np.flatnonzero(A[:, 0] > 0)
        dn = np.flatnonzero(A[:, 0] < 0)
        keep = []
        if len(up):
            keep.append(up[np.argmin(b[up])])
        if len(dn):
            keep.append(dn[np.argmin(b[dn])])
        keep = sorted(keep)
    elif radius > 1e-7 and np.isfinite(radius) and len(b) > e:
        try:
            hs = HalfspaceIntersection(np.hstack([A, -b[:, None]]), center)
            keep = sorted(set(int(i) for i in hs.dual_vertices))
        except (QhullError, ValueError):
            keep = None
    if keep is None:
        keep = _lp_prune(A, b)
    out = Polytope(A[keep], b[keep], p.degenerate, dim=e)
    out._cheb = p._cheb
    return out


def _lp_prune(A, b):
    active = list(range(len(b)))
    for i in range(len(b)):
        others = [k for k in active if k != i]
        if not others:
            continue
        Aub = np.vstack([A[others], A[i]])
        bub = np.concatenate([b[others], [b[i] + 1.0]])
        sol = lp.solve_dense(A[i], Aub, bub, bounds=[(None, None)] * A.shape[1], maximize=True)
        if sol.status == lp.OPTIMAL and sol.objective <= b[i] + TOL:
            active = others
    return active


def facet_separated(p: Polytope, q: Polytope, Vp=None, Vq=None, tol: float = TOL) -> bool:
    """True when a facet of one polytope has the other on its far side.

    Sufficient for disjoint interiors (and exact in the plane); needs only
    vertex lists, so it skips an LP for most non-overlapping pairs.
    """
    Vp = vertices(p) if Vp is None else Vp
    Vq = vertices(q) if Vq is None else Vq
    if p.n_halfspaces and np.any((Vq @ p.A.T).min(axis=0) >= p.b - tol):
        return True
    return bool(q.n_halfspaces and np.any((Vp @ q.A.T).min(axis=0) >= q.b - tol))


def intersect(p: Polytope, q: Polytope, prune: bool = True) -> Optional[Polytope]:
    """Intersection of two polytopes, or None when it has no point."""
    if p.dim != q.dim:
        raise DimensionMismatch(f"{p.dim} vs {q.dim}")
    r = Polytope(np.vstack([p.A, q.A]), np.concatenate([p.b, q.b]),
                 p.degenerate or q.degenerate, dim=p.dim)
    if r.chebyshev() is None:
        return None
    return remove_redundant(r) if prune else r


def intersect_halfspaces(p: Polytope, A, b, prune: bool = True) -> Optional[Polytope]:
    return intersect(p, Polytope(A, b, dim=p.dim), prune)


def affine_preimage(p: Polytope, M, c) -> Optional[Polytope]:
    """``{x : M x + c in p}`` by substitution. None when provably empty."""
    M = np.asarray(M, float)
    c = np.asarray(c, float)
    if M.shape != (p.dim, p.dim) or c.shape != (p.dim,):
        raise DimensionMismatch("map shape")
    A = p.A @ M
    b = p.b - p.A @ c
    norms = np.linalg.norm(A, axis=1)
    const = norms < 1e-12
    if np.any(const & (b < -TOL)):
        return None
    keep = ~const
    return Polytope(A[keep], b[keep], p.degenerate, dim=p.dim)


def vertices(p: Polytope) -> np.ndarray:
    """Vertex list of a bounded polytope."""
    if p._verts is not None:
        return p._verts
    cb = p.chebyshev()
    if cb is None:
        raise EmptyPolytope("polytope is empty")
    e = p.dim
    center, radius = cb
    V = None
    if e == 1:
        up = p.b[p.A[:, 0] > 0] / p.A[p.A[:, 0] > 0, 0]
        dn = p.b[p.A[:, 0] < 0] / p.A[p.A[:, 0] < 0, 0]
        V = np.array([[dn.max()], [up.min()]]) if radius > TOL else np.array([[up.min()]])
    elif radius > 1e-7 and not p.degenerate:
        try:
            hs = HalfspaceIntersection(np.hstack([p.A, -p.b[:, None]]), center)
            V = _unique_rows(hs.intersections)
        except (QhullError, ValueError):
            V = None
    if V is None:
        V = _brute_vertices(p)
    V.setflags(write=False)
    p._verts = V
    return V


def _unique_rows(V, tol=1e-9):
    out = []
    for v in V:
        if not any(np.max(np.abs(v - w)) <= tol for w in out):
            out.append(v)
    return np.array(out)


def _brute_vertices(p: Polytope) -> np.ndarray:
    e = p.dim
    pts = []
    for idx in itertools.combinations(range(p.n_halfspaces), e):
        A = p.A[list(idx)]
        if abs(np.linalg.det(A)) < 1e-12:
            continue
        x = np.linalg.solve(A, p.b[list(idx)])
        if np.all(p.A @ x <= p.b + 1e-8):
            pts.append(x)
    if not pts:
        raise DegeneratePolytope("no vertices found")
    return _unique_rows(np.array(pts))


def hull(points: np.ndarray) -> Polytope:
    """H-representation of the convex hull of a point set, of any affine dimension."""
    P = np.asarray(points, float)
    e = P.shape[1]
    c0 = P.mean(axis=0)
    Q = P - c0
    _, s, Vt = np.linalg.svd(Q, full_matrices=True)
    scale = max(1.0, float(np.abs(P).max()))
    rank = int(np.sum(s > 1e-9 * scale))
    basis = Vt[:rank].T
    null = Vt[rank:].T
    rows, offs = [], []
    for k in range(null.shape[1]):
        n = null[:, k]
        rows += [n, -n]
        offs += [n @ c0, -(n @ c0)]
    if rank == 1:
        u = basis[:, 0]
        z = Q @ u
        rows += [u, -u]
        offs += [u @ c0 + z.max(), -(u @ c0 + z.min())]
    elif rank >= 2:
        Z = Q @ basis
        ch = ConvexHull(Z)
        for eq in ch.equations:
            nz, off = eq[:-1], eq[-1]
            n = basis @ nz
            rows.append(n)
            offs.append(n @ c0 - off)
    A = np.array(rows).reshape(-1, e)
    b = np.array(offs)
    out = remove_redundant(Polytope(A, b, degenerate=rank < e, dim=e))
    return out


def affine_image(p: Polytope, M, c) -> Polytope:
    """``{M x + c : x in p}``; singular maps go through vertex enumeration."""
    M = np.asarray(M, float)
    c = np.asarray(c, float)
    if M.shape != (p.dim, p.dim) or c.shape != (p.dim,):
        raise DimensionMismatch("map shape")
    if np.linalg.cond(M) < 1e10:
        Minv = np.linalg.inv(M)
        A = p.A @ Minv
        b = p.b + A @ c
        return Polytope(A, b, p.degenerate, dim=p.dim)
    V = vertices(p)
    return hull(V @ M.T + c)


def volume(p: Polytope) -> float:
    if p.degenerate:
        return 0.0
    cb = p.chebyshev()
    if cb is None or cb[1] <= TOL:
        return 0.0
    V = vertices(p)
    if p.dim == 1:
        return float(V.max() - V.min())
    return float(ConvexHull(V).volume)


def bounding_box(p: Polytope):
    V = vertices(p)
    return V.min(axis=0), V.max(axis=0)


def sample_uniform(p: Polytope, n: int, rng: np.random.Generator) -> np.ndarray:
    """Rejection sampling from the bounding box."""
    lo, hi = bounding_box(p)
    out = []
    got = 0
    while got < n:
        X = rng.uniform(lo, hi, size=(max(64, 2 * (n - got)), p.dim))
        ok = np.all(X @ p.A.T <= p.b + 0.0, axis=1)
        out.append(X[ok])
        got += int(ok.sum())
    return np.vstack(out)[:n]


# ------------------------------------------------------------------ partitions

@dataclass(frozen=True)
class Fcp:
    """Ordered list of (agent_state, cell) pairs partitioning each agent state's domain."""

    regions: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))

    def __len__(self):
        return len(self.regions)

    def __iter__(self):
        return iter(self.regions)

    def for_state(self, s1: int) -> list:
        return [(k, cell) for k, (s, cell) in enumerate(self.regions) if s == s1]

    def agent_states(self) -> list:
        return sorted(set(s for s, _ in self.regions))

    def canonical(self) -> "Fcp":
        order = sorted(range(len(self.regions)), key=lambda k: (self.regions[k][0], k))
        return Fcp(tuple(self.regions[k] for k in order))

    def locate(self, s1: int, x, tol: float = TOL) -> int:
        """Index of the first region of ``s1`` containing ``x``."""
        return locate(self.regions, s1, x, tol)


def locate(regions, s1, x, tol=TOL, slack=1e-6) -> int:
    x = np.asarray(x, float)
    best, best_v = -1, np.inf
    for k, (s, cell) in enumerate(regions):
        if s != s1:
            continue
        if cell.n_halfspaces == 0:
            return k
        v = float(np.max(cell.A @ x - cell.b))
        if v <= tol:
            return k
        if v < best_v:
            best, best_v = k, v
    if best >= 0 and best_v <= slack:
        return best
    raise NoRegion(f"no region for agent state {s1} contains {x.tolist()}")


def refine(a: Fcp, b: Fcp) -> Fcp:
    """Common refinement; degenerate intersections are dropped."""
    out = []
    b_by_state: dict = {}
    for s, cell in b.regions:
        b_by_state.setdefault(s, []).append(cell)
    for s, pa in a.regions:
        if pa.dim != (b.regions[0][1].dim if b.regions else pa.dim):
            raise DimensionMismatch("partition dimensions differ")
        for pb in b_by_state.get(s, ()):
            q = intersect(pa, pb, prune=False)
            if q is None or not is_full_dim(q):
                continue
            out.append((s, remove_redundant(q)))
    return Fcp(tuple(out)).canonical()


def refine_cells(cells_a: Iterable[Polytope], cells_b: Iterable[Polytope]) -> list:
    """Refinement of two cell lists over the same domain (no agent-state labels)."""
    cells_b = list(cells_b)
    out = []
    for pa in cells_a:
        for pb in cells_b:
            q = intersect(pa, pb, prune=False)
            if q is None or not is_full_dim(q):
                continue
            out.append(remove_redundant(q))
    return out


def merge_cells(items, rel_tol: float = 1e-10) -> list:
    """Greedily merge (cell, value) pairs with equal values whose union is convex.

    Two cells with disjoint interiors have a convex union exactly when the
    volume of their joint hull equals the sum of their volumes.  Order is
    kept: a merged cell takes the position of its first member.
    """
    items = list(items)
    out: list = []
    groups: dict = {}
    for cell, val in items:
        for key in groups:
            if abs(key - val) <= 1e-12 * (1.0 + abs(val)):
                break
        else:
            key = val
        groups.setdefault(key, []).append(len(out))
        out.append([cell, val, volume(cell)])
    dead = set()
    for idx in groups.values():
        changed = True
        while changed:
            changed = False
            live = [i for i in idx if i not in dead]
            for a, i in enumerate(live):
                lo_i, hi_i = bounding_box(out[i][0])
                for j in live[a + 1:]:
                    lo_j, hi_j = bounding_box(out[j][0])
                    if np.any(lo_i > hi_j + TOL) or np.any(lo_j > hi_i + TOL):
                        continue
                    V = np.vstack([vertices(out[i][0]), vertices(out[j][0])])
                    try:
                        h = hull(V)
                    except (QhullError, ValueError):
                        continue
                    vh = volume(h)
                    want = out[i][2] + out[j][2]
                    if abs(vh - want) <= rel_tol * max(vh, 1e-300):
                        out[i][0], out[i][2] = h, vh
                        dead.add(j)
                        changed = True
                        break
                if changed:
                    break
    return [(c, v) for k, (c, v, _) in enumerate(out) if k not in dead]


def check_partition(fcp: Fcp, domains: dict, rel_tol: float = 1e-9,
                    n_samples: int = 0, rng=None) -> list:
    """Coverage and disjointness diagnostics; an empty list means the check passed.

    ``domains`` maps agent state -> Polytope.  Coverage compares summed cell
    volumes with the domain volume.  Disjointness is checked pairwise with
    the inscribed-ball LP of each intersection.  Optional sampling counts
    points claimed by zero or several cells.
    """
    problems = []
    for s1, dom in domains.items():
        cells = [c for s, c in fcp.regions if s == s1]
        dv = volume(dom)
        cv = sum(volume(c) for c in cells)
        if abs(cv - dv) > rel_tol * max(dv, 1.0) + 1e-12:
            problems.append(f"agent state {s1}: covered volume {cv!r} vs domain {dv!r}")
        for i, j in itertools.combinations(range(len(cells)), 2):
            q = intersect(cells[i], cells[j], prune=False)
            if q is not None and q.chebyshev()[1] > 1e-7:
                problems.append(f"agent state {s1}: cells {i} and {j} overlap")
        if n_samples and cells:
            rng = rng or np.random.default_rng(0)
            X = sample_uniform(dom, n_samples, rng)
            hits = sum((X @ c.A.T <= c.b + 1e-9).all(axis=1).astype(int) for c in cells)
            if np.any(hits == 0):
                problems.append(f"agent state {s1}: {int(np.sum(hits == 0))} uncovered samples")
    return problems


# --------------------------------------------------------------- PWC functions

class _StackedCells:
    """All cells of one agent state stacked for vectorised point location."""

    def __init__(self, cells):
        self.index = [k for k, _ in cells]
        rows = [c.A for _, c in cells]
        self.A = np.vstack(rows) if rows else np.zeros((0, 0))
        self.b = np.concatenate([c.b for _, c in cells]) if cells else np.zeros(0)
        sizes = [c.n_halfspaces for _, c in cells]
        self.starts = np.cumsum([0] + sizes[:-1]).astype(int)
        self.empty = [n == 0 for n in sizes]

    def locate(self, x, tol=TOL, slack=1e-6):
        if not self.index:
            return -1
        if any(self.empty):
            return self.index[self.empty.index(True)]
        viol = np.maximum.reduceat(self.A @ x - self.b, self.starts)
        hit = np.flatnonzero(viol <= tol)
        if len(hit):
            return self.index[hit[0]]
        k = int(np.argmin(viol))
        return self.index[k] if viol[k] <= slack else -1


@dataclass(frozen=True)
class PwcFunction:
    """Piecewise-constant function: one value per region of an Fcp."""

    fcp: Fcp
    values: tuple
    tag: str = field(default="", compare=False)
    _tables: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.values) != len(self.fcp.regions):
            raise ValueError("one value per region required")

    def region_index(self, s1: int, x) -> int:
        tab = self._tables.get(s1)
        if tab is None:
            tab = _StackedCells(self.fcp.for_state(s1))
            self._tables[s1] = tab
        k = tab.locate(np.asarray(x, float))
        if k < 0:
            raise NoRegion(f"no region for agent state {s1} contains {np.asarray(x).tolist()}")
        return k

    def value(self, s1: int, x) -> float:
        return self.values[self.region_index(s1, x)]

    def __call__(self, s1: int, x) -> float:
        return self.value(s1, x)

    def regions_of(self, s1: int) -> list:
        return [(cell, self.values[k]) for k, cell in self.fcp.for_state(s1)]


def fcp_to_json(fcp: Fcp, values: Optional[Sequence[float]] = None) -> list:
    out = []
    for k, (s, cell) in enumerate(fcp.regions):
        item = {"agent_state": int(s), "halfspaces": cell.halfspaces()}
        if cell.degenerate:
            item["degenerate"] = True
        if values is not None:
            item["value"] = float(values[k])
        out.append(item)
    return out


def fcp_from_json(items: list, dim: int):
    regions, values = [], []
    for it in items:
        hs = np.array(it["halfspaces"], float).reshape(-1, dim + 1)
        regions.append((int(it["agent_state"]),
                        Polytope(hs[:, :dim], hs[:, dim], it.get("degenerate", False), dim=dim)))
        values.append(it.get("value"))
    fcp = Fcp(tuple(regions))
    if all(v is not None for v in values) and values:
        return fcp, values
    return fcp, None


def difference(p: Polytope, q: Polytope) -> list:
    """Full-dimensional convex pieces of ``p`` minus ``q``."""
    q = remove_redundant(q) if q.chebyshev() is not None else q
    pieces = []
    prefix_A, prefix_b = [], []
    for a, bq in zip(q.A, q.b):
        A = np.vstack([p.A] + prefix_A + [-a[None, :]]) if prefix_A else np.vstack([p.A, -a[None, :]])
        b = np.concatenate([p.b] + prefix_b + [[-bq]])
        piece = Polytope(A, b, dim=p.dim)
        if is_full_dim(piece):
            pieces.append(remove_redundant(piece))
        prefix_A.append(a[None, :])
        prefix_b.append([bq])
    return pieces


def disjoint_bbox(p: Polytope, q: Polytope, tol: float = 1e-9) -> bool:
    """Cheap sufficient test for an empty interior intersection."""
    lp_, hp = bounding_box(p)
    lq, hq = bounding_box(q)
    return bool(np.any(lp_ > hq - tol) or np.any(lq > hp - tol))
