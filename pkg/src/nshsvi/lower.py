"""Lower bound: a max over piecewise-constant alpha functions.

The stage game at a particle belief is a linear program over agent 1's
action distribution ``p`` and, for every (a1, next agent state), a
non-negative combination ``lam`` of alpha functions whose total mass is
``p[a1]``.  The backup turns an optimal solution into a new alpha function
that is exact on every region of the perception partition holding particles.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import geometry as geo
from . import lp
from .beliefs import ParticleBelief
from .errors import NumericalFailure

log = logging.getLogger(__name__)

AlphaFunction = geo.PwcFunction


class GammaSet:
    """Ordered alpha functions with a cache of point values."""

    def __init__(self, alphas, lower: float):
        self.alphas: list = list(alphas)
        self.lower = float(lower)
        self._cache: dict = {}
        # geometric pieces reused across backups; alphas never change once added
        self.geo_cache: dict = {}

    def __len__(self):
        return len(self.alphas)

    def __getitem__(self, k):
        return self.alphas[k]

    def add(self, alpha: AlphaFunction) -> int:
        self.alphas.append(alpha)
        return len(self.alphas) - 1

    def value(self, k: int, s1: int, x) -> float:
        key = (k, s1, x.tobytes())
        v = self._cache.get(key)
        if v is None:
            v = self.alphas[k].value(s1, x)
            if len(self._cache) > 2_000_000:
                self._cache.clear()
            self._cache[key] = v
        return v

    def values_at(self, s1: int, x) -> np.ndarray:
        x = np.asarray(x, float)
        return np.array([self.value(k, s1, x) for k in range(len(self.alphas))])

    def evaluate(self, b: ParticleBelief):
        """(max_k <alpha_k, b>, argmax with lowest index on ties)."""
        best, arg = -np.inf, -1
        for k in range(len(self.alphas)):
            v = float(sum(w * self.value(k, b.s1, x) for x, w in zip(b.points, b.weights)))
            if v > best + 1e-12:
                best, arg = v, k
        return best, arg


def constant_alpha(model, value: float, tag: str = "") -> AlphaFunction:
    fcp = model.perception_fcp()
    return AlphaFunction(fcp, (value,) * len(fcp.regions), tag)


def init_gamma(model) -> GammaSet:
    L, _ = model.value_bounds()
    return GammaSet([constant_alpha(model, L, "init")], L)


def evaluate(gamma: GammaSet, b: ParticleBelief) -> float:
    return gamma.evaluate(b)[0]


# -------------------------------------------------------------- stage game

@dataclass
class StageGameLB:
    value: float
    dual_value: float
    u1: np.ndarray
    u2: np.ndarray
    lam: dict                  # (a1, s1') -> coefficients over Gamma
    belief: ParticleBelief
    lower: float
    n_alpha: int
    extra: dict = field(default_factory=dict)

    def support(self, a1: int, s_next: int) -> tuple:
        lam = self.lam.get((a1, s_next))
        if lam is None:
            return ()
        return tuple(int(k) for k in np.flatnonzero(lam > 1e-12))

    def continuation(self, gamma: GammaSet, a1: int, s_next: int, x) -> float:
        """sum_alpha lam * alpha(s', x), i.e. p[a1] times the averaged alpha."""
        lam = self.lam.get((a1, s_next))
        if lam is None:
            return self.u1[a1] * self.lower
        return float(sum(lam[k] * gamma.value(k, s_next, x) for k in self.support(a1, s_next)))

    def tracked_alpha(self, a1: int, s_next: int) -> list:
        """Averaged alpha for (a1, s1') as a list of (weight, alpha index)."""
        p = self.u1[a1]
        lam = self.lam.get((a1, s_next))
        if p <= 1e-12 or lam is None or lam.sum() <= 1e-12:
            return [(1.0, 0)]
        return [(float(lam[k] / lam.sum()), k) for k in self.support(a1, s_next)]


def _successor_table(model, b: ParticleBelief):
    """succ[i][a1][a2] = list of (s1', x', prob); reach[a1] = sorted reachable s1'."""
    n = len(b)
    succ = [[[model.successors(b.s1, b.points[i], a1, a2, check=False)
              for a2 in range(model.n_a2)] for a1 in range(model.n_a1)] for i in range(n)]
    reach = []
    for a1 in range(model.n_a1):
        s = set()
        for i in range(n):
            for a2 in range(model.n_a2):
                s.update(sn for sn, _, pr in succ[i][a1][a2] if pr > 0)
        reach.append(sorted(s))
    return succ, reach


def _coupling(model, gamma, b, succ, reach):
    """W[(i, a1, a2, s1')] = vector over Gamma of sum prob * alpha(s1', x')."""
    W = {}
    G = len(gamma)
    for i in range(len(b)):
        for a1 in range(model.n_a1):
            for a2 in range(model.n_a2):
                for sn, xn, pr in succ[i][a1][a2]:
                    w = W.setdefault((i, a1, a2, sn), np.zeros(G))
                    w += pr * gamma.values_at(sn, xn)
    return W


def _rewards(model, b):
    n = len(b)
    R = np.zeros((n, model.n_a1, model.n_a2))
    for i in range(n):
        for a1 in range(model.n_a1):
            for a2 in range(model.n_a2):
                R[i, a1, a2] = model.reward(b.s1, b.points[i], a1, a2)
    return R


def build_lower_primal(model, gamma: GammaSet, b: ParticleBelief, succ=None, reach=None):
    if succ is None:
        succ, reach = _successor_table(model, b)
    W = _coupling(model, gamma, b, succ, reach)
    R = _rewards(model, b)
    beta = model.beta
    G = len(gamma)
    n = len(b)
    bld = lp.LpBuilder(maximize=True)
    v = [bld.free_var(f"v{i}", obj=float(b.weights[i])) for i in range(n)]
    p = [bld.var(f"p{a1}") for a1 in range(model.n_a1)]
    lam = {}
    for a1 in range(model.n_a1):
        for sn in reach[a1]:
            lam[(a1, sn)] = [bld.var(f"lam_{a1}_{sn}_{k}") for k in range(G)]
    rows_v = {}
    for i in range(n):
        for a2 in range(model.n_a2):
            coef = {v[i]: 1.0}
            for a1 in range(model.n_a1):
                coef[p[a1]] = coef.get(p[a1], 0.0) - R[i, a1, a2]
                for sn in reach[a1]:
                    w = W.get((i, a1, a2, sn))
                    if w is None:
                        continue
                    for k in range(G):
                        if w[k] != 0.0:
                            coef[lam[(a1, sn)][k]] = -beta * w[k]
            rows_v[(i, a2)] = bld.add(coef, lp.LE, 0.0, f"val_{i}_{a2}")
    for (a1, sn), ids in lam.items():
        coef = {j: 1.0 for j in ids}
        coef[p[a1]] = -1.0
        bld.add(coef, lp.EQ, 0.0, f"mass_{a1}_{sn}")
    bld.add({j: 1.0 for j in p}, lp.EQ, 1.0, "simplex")
    layout = dict(v=v, p=p, lam=lam, rows_v=rows_v, W=W, R=R, reach=reach, succ=succ)
    return bld, layout


def build_lower_dual(model, gamma: GammaSet, b: ParticleBelief, layout):
    """Explicit dual: min v over agent 2's mixed strategies y (scaled by particle weight)."""
    W, R, reach = layout["W"], layout["R"], layout["reach"]
    beta = model.beta
    G = len(gamma)
    n = len(b)
    bld = lp.LpBuilder(maximize=False)
    v = bld.free_var("v", obj=1.0)
    y = {(i, a2): bld.var(f"y_{i}_{a2}") for i in range(n) for a2 in range(model.n_a2)}
    vs = {(a1, sn): bld.free_var(f"w_{a1}_{sn}") for a1 in range(model.n_a1) for sn in reach[a1]}
    for i in range(n):
        bld.add({y[(i, a2)]: 1.0 for a2 in range(model.n_a2)}, lp.EQ, float(b.weights[i]), f"mass_{i}")
    for a1 in range(model.n_a1):
        coef = {v: 1.0}
        for i in range(n):
            for a2 in range(model.n_a2):
                coef[y[(i, a2)]] = -R[i, a1, a2]
        for sn in reach[a1]:
            coef[vs[(a1, sn)]] = -beta
        bld.add(coef, lp.GE, 0.0, f"act_{a1}")
    for (a1, sn), j in vs.items():
        for k in range(G):
            coef = {j: 1.0}
            for i in range(n):
                for a2 in range(model.n_a2):
                    w = W.get((i, a1, a2, sn))
                    if w is not None and w[k] != 0.0:
                        coef[y[(i, a2)]] = -w[k]
            bld.add(coef, lp.GE, 0.0, f"alpha_{a1}_{sn}_{k}")
    return bld, dict(v=v, y=y, vs=vs)


def stage_game_lb(model, gamma: GammaSet, b: ParticleBelief, explicit_dual: bool = False,
                  backend: Optional[str] = None) -> StageGameLB:
    """Solve the lower stage game at ``b``; value equals the backed-up lower bound."""
    succ, reach = _successor_table(model, b)
    bld, lay = build_lower_primal(model, gamma, b, succ, reach)
    sol = lp.solve(bld.build(), backend)
    if not sol.optimal:
        raise NumericalFailure(f"lower stage LP is {sol.status}")
    x = sol.x
    u1 = np.clip(np.array([x[j] for j in lay["p"]]), 0.0, None)
    u1 /= u1.sum()
    lam = {key: np.clip(x[ids], 0.0, None) for key, ids in lay["lam"].items()}
    n = len(b)
    if explicit_dual:
        dbld, dlay = build_lower_dual(model, gamma, b, lay)
        dsol = lp.solve(dbld.build(), backend)
        if not dsol.optimal:
            raise NumericalFailure(f"lower dual LP is {dsol.status}")
        Y = np.array([[dsol.x[dlay["y"][(i, a2)]] for a2 in range(model.n_a2)] for i in range(n)])
        dual_value = dsol.objective
    else:
        Y = np.array([[sol.duals[lay["rows_v"][(i, a2)]] for a2 in range(model.n_a2)]
                      for i in range(n)])
        dual_value = sol.dual_objective
    u2 = _rows_to_strategy(Y)
    return StageGameLB(sol.objective, dual_value, u1, u2, lam, b, gamma.lower, len(gamma),
                       extra=dict(succ=succ, reach=reach, layout=lay))


def _rows_to_strategy(Y):
    Y = np.clip(np.asarray(Y, float), 0.0, None)
    s = Y.sum(axis=1, keepdims=True)
    k = Y.shape[1]
    return np.where(s > 1e-15, Y / np.where(s > 1e-15, s, 1.0), 1.0 / k)


# -------------------------------------------------------------- backup

def f_values(model, gamma: GammaSet, stage: StageGameLB, s1: int, x) -> np.ndarray:
    """Pointwise backed-up value for every a2 (before the min over a2)."""
    x = np.asarray(x, float)
    out = np.zeros(model.n_a2)
    beta = model.beta
    for a2 in range(model.n_a2):
        tot = 0.0
        for a1 in range(model.n_a1):
            p = stage.u1[a1]
            if p <= 0:
                continue
            tot += p * model.reward(s1, x, a1, a2)
            for sn, xn, pr in model.successors(s1, x, a1, a2, check=False):
                tot += beta * pr * stage.continuation(gamma, a1, sn, xn)
        out[a2] = tot
    return out


def f_value(model, gamma, stage, s1, x) -> float:
    return float(f_values(model, gamma, stage, s1, x).min())


def _target_cells(model, gamma, stage, a1, loc_next, cache):
    """Cells of S_E on which every relevant alpha for (a1, loc') is constant.

    Ordered by percept, then by alpha region order, which mirrors the
    first-match rule used by point lookup.
    """
    n_per = len(model.percepts)
    key_parts = []
    for per in range(n_per):
        sn = model.agent_state(loc_next, per)
        key_parts.append((sn, stage.support(a1, sn)))
    key = ("targets",) + tuple(key_parts)
    if key in cache:
        return cache[key]
    phi_p = model.perception_fcp()
    cells = []
    for sn, supp in key_parts:
        part = [c for _, c in phi_p.for_state(sn)]
        for k in supp:
            part = geo.refine_cells(part, [c for _, c in gamma[k].fcp.for_state(sn)])
        cells.extend(part)
    cache[key] = cells
    return cells


def _pre_partition(region, dyn_cells, targets):
    """Partition of ``region`` by (dynamics cell, target cell containing the image)."""
    out = []
    for d in dyn_cells:
        base = geo.intersect(region, d.cell, prune=False)
        if base is None or not geo.is_full_dim(base):
            continue
        base = geo.remove_redundant(base)
        singular = np.linalg.matrix_rank(d.M) < d.M.shape[0]
        Minv = None if singular else np.linalg.inv(d.M)
        blo, bhi = geo.bounding_box(base)
        Vb = geo.vertices(base)
        got = []
        for t in targets:
            if Minv is not None:
                # preimage of a bounded target is bounded: cheap box rejection
                Vp = (geo.vertices(t) - d.c) @ Minv.T
                if np.any(Vp.min(axis=0) >= bhi - 1e-9) or np.any(Vp.max(axis=0) <= blo + 1e-9):
                    continue
            pre = geo.affine_preimage(t, d.M, d.c)
            if pre is None:
                continue
            if np.all(Vb @ pre.A.T <= pre.b + 1e-9):
                q = base
            elif Minv is not None and geo.facet_separated(base, pre, Vb, Vp):
                continue
            else:
                q = geo.intersect(base, pre, prune=False)
                if q is None or not geo.is_full_dim(q):
                    continue
                q = geo.remove_redundant(q)
            pieces = [q]
            if singular:
                # images can sit on a shared face; earlier targets win, as in lookup
                for prev in got:
                    nxt = []
                    for pc in pieces:
                        if geo.disjoint_bbox(pc, prev):
                            nxt.append(pc)
                            continue
                        inter = geo.intersect(pc, prev, prune=False)
                        if inter is None or not geo.is_full_dim(inter):
                            nxt.append(pc)
                        else:
                            nxt.extend(geo.difference(pc, prev))
                    pieces = nxt
            got.extend(pieces)
        out.extend(got)
    return out


def _memo(cache, key, keep, fn):
    """Cache keyed by object ids; ``keep`` holds the objects so ids stay valid."""
    hit = cache.get(key)
    if hit is not None and all(a is b for a, b in zip(hit[0], keep)):
        return hit[1]
    val = fn()
    cache[key] = (keep, val)
    return val


def _boxes(cells):
    lo = np.array([geo.bounding_box(c)[0] for c in cells])
    hi = np.array([geo.bounding_box(c)[1] for c in cells])
    return lo, hi


def _product(cells, partition, tol: float = 1e-9):
    out = []
    if not cells or not partition:
        return out
    plo, phi = _boxes(partition)
    for pa in cells:
        lo, hi = geo.bounding_box(pa)
        near = np.flatnonzero(np.all((plo < hi - tol) & (lo < phi - tol), axis=1))
        V = geo.vertices(pa)
        inside = [j for j in near
                  if np.all(V @ partition[j].A.T <= partition[j].b + tol)]
        if inside:
            # pa already lies in one cell of the partition
            out.append(pa)
            continue
        for j in near:
            pb = partition[j]
            if geo.facet_separated(pa, pb, V):
                continue
            q = geo.intersect(pa, pb, prune=False)
            if q is None or not geo.is_full_dim(q):
                continue
            out.append(geo.remove_redundant(q))
    return out


def ispp_backup(model, gamma: GammaSet, stage: StageGameLB, region: geo.Polytope, s1: int,
                target_cache: Optional[dict] = None) -> list:
    """Image-split-preimage-product backup over one perception region.

    Returns a list of (cell, value) partitioning ``region``.
    """
    cache = gamma.geo_cache if target_cache is None else target_cache
    loc, per = model.split_state(s1)
    act1 = [a1 for a1 in range(model.n_a1) if stage.u1[a1] > 0]
    partitions = []
    seen = set()
    for a1 in act1:
        for a2 in range(model.n_a2):
            row = model.local_delta[loc, per, a1, a2]
            for bi, mu in enumerate(model.branch_weights):
                if mu <= 0:
                    continue
                dyn = model.dynamics[bi][(loc, a1, a2)]
                for ln in np.flatnonzero(row > 0):
                    targets = _target_cells(model, gamma, stage, a1, int(ln), cache)
                    key = ("dyn", id(dyn), id(targets))
                    if key in seen:
                        continue
                    seen.add(key)
                    partitions.append(_memo(
                        cache, ("pre", id(region)) + key, (region, dyn, targets),
                        lambda: _pre_partition(region, dyn, targets)))
            regs = model.reward_regions(s1, a1, a2)
            key = ("rew", id(regs))
            if key not in seen:
                seen.add(key)
                partitions.append(_memo(
                    cache, ("rewcut", id(region), id(regs)), (region, regs),
                    lambda: _product([region], [c for c, _ in regs])))
    partitions = [p for p in partitions if len(p) > 1]

    def combine():
        cells = [region]
        for part in partitions:
            cells = _product(cells, part)
        return cells

    cells = _memo(cache, ("cells", id(region)) + tuple(id(p) for p in partitions),
                  (region,) + tuple(partitions), combine)
    out = []
    for cell in cells:
        cb = cell.chebyshev()
        if cb is None or cb[1] <= geo.TOL:
            continue
        out.append((cell, f_value(model, gamma, stage, s1, cb[0])))
    return out


def has_mass(region: geo.Polytope, b: ParticleBelief, tol: float = geo.TOL) -> bool:
    return any(geo.contains(region, x, tol) for x in b.points)


def backup_alpha(model, gamma: GammaSet, stage: StageGameLB) -> AlphaFunction:
    b = stage.belief
    phi_p = model.perception_fcp()
    regions, values = [], []
    for s, cell in phi_p.regions:
        if s == b.s1 and has_mass(cell, b):
            for sub, val in geo.merge_cells(ispp_backup(model, gamma, stage, cell, s)):
                regions.append((s, sub))
                values.append(val)
        else:
            regions.append((s, cell))
            values.append(gamma.lower)
    return AlphaFunction(geo.Fcp(tuple(regions)), tuple(values), "backup")


def point_update_lb(model, gamma: GammaSet, b: ParticleBelief,
                    stage: Optional[StageGameLB] = None) -> AlphaFunction:
    """Add the backed-up alpha function at ``b`` to ``gamma`` and return it."""
    if stage is None or stage.n_alpha != len(gamma):
        stage = stage_game_lb(model, gamma, b)
    alpha = backup_alpha(model, gamma, stage)
    gamma.add(alpha)
    return alpha


def alpha_to_json(alpha: AlphaFunction) -> list:
    return geo.fcp_to_json(alpha.fcp, alpha.values)
