"""Upper bound from belief-value points.

The bound at a belief is the cheapest way to write it as a convex
combination of stored beliefs plus a transport penalty: half the value
spread times the total-variation distance to that combination.  An
optional catch-all point with value ``default_value`` stands for every
belief of an agent state; it keeps the initial bound equal to the largest
achievable value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import geometry as geo
from . import lp
from .beliefs import MERGE_TOL, ParticleBelief, make_belief
from .errors import AgentStateMismatch, NoPointsForAgentState, NumericalFailure

MAX_REWARD, MAX_ABS_REWARD = "max_reward", "max_abs_reward"


class UpsilonSet:
    def __init__(self, lower: float, upper_init: float, default_value: Optional[float] = None):
        self.lower = float(lower)
        self.upper_init = float(upper_init)
        self.default_value = default_value
        self.points: list = []          # (ParticleBelief, y) in insertion order
        self._by_state: dict = {}

    @property
    def spread(self) -> float:
        return self.upper_init - self.lower

    def __len__(self):
        return len(self.points)

    def add(self, b: ParticleBelief, y: float) -> None:
        self.points.append((b, float(y)))
        self._by_state.setdefault(b.s1, []).append((b, float(y)))

    def for_state(self, s1: int) -> list:
        return self._by_state.get(s1, [])

    def to_json(self, model) -> dict:
        return {"lower": self.lower, "upper_init": self.upper_init,
                "default_value": self.default_value,
                "points": [{"belief": b.to_json(model), "y": y} for b, y in self.points]}

    @classmethod
    def from_json(cls, model, data: dict) -> "UpsilonSet":
        from .beliefs import belief_from_json
        ups = cls(data["lower"], data["upper_init"], data.get("default_value"))
        for item in data["points"]:
            ups.add(belief_from_json(model, item["belief"], check=False), item["y"])
        return ups


def init_upsilon(model, mode: str = MAX_ABS_REWARD) -> UpsilonSet:
    """One point per agent state at value U_init, plus the catch-all point."""
    L, U = model.value_bounds()
    if mode == MAX_REWARD:
        u0 = U
    elif mode == MAX_ABS_REWARD:
        u0 = model.max_abs_reward() / (1.0 - model.beta)
    else:
        raise ValueError(f"unknown init mode {mode!r}")
    ups = UpsilonSet(L, u0, default_value=u0)
    seen = set()
    for s1, cell in model.perception_fcp().regions:
        if s1 in seen:
            continue
        cb = cell.chebyshev()
        if cb is None or cb[1] <= geo.TOL:
            continue
        seen.add(s1)
        ups.add(make_belief(model, s1, cb[0][None, :], [1.0], check=False), u0)
    return ups


class _Registry:
    """Merges points closer than the tolerance into shared support indices."""

    def __init__(self):
        self.points: list = []

    def index(self, x) -> int:
        if self.points:
            d = np.max(np.abs(np.asarray(self.points) - x), axis=1)
            k = int(np.argmin(d))
            if d[k] <= MERGE_TOL:
                return k
        self.points.append(np.asarray(x, float))
        return len(self.points) - 1

    def masses(self, b: ParticleBelief) -> dict:
        out: dict = {}
        for x, w in zip(b.points, b.weights):
            k = self.index(x)
            out[k] = out.get(k, 0.0) + float(w)
        return out


def k_ub(b: ParticleBelief, b2: ParticleBelief, spread: float) -> float:
    if b.s1 != b2.s1:
        raise AgentStateMismatch(f"agent states {b.s1} and {b2.s1} differ")
    reg = _Registry()
    p = reg.masses(b)
    q = reg.masses(b2)
    keys = set(p) | set(q)
    return 0.5 * spread * float(sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys))


def evaluate_ub(ups: UpsilonSet, b: ParticleBelief, backend=None) -> float:
    pts = ups.for_state(b.s1)
    if not pts and ups.default_value is None:
        raise NoPointsForAgentState(f"no upper-bound points for agent state {b.s1}")
    reg = _Registry()
    target = reg.masses(b)
    Pk = [reg.masses(bk) for bk, _ in pts]
    n_e = len(reg.points)
    h = 0.5 * ups.spread
    bld = lp.LpBuilder(maximize=False)
    lam = [bld.var(f"lam{k}", obj=y) for k, (_, y) in enumerate(pts)]
    c = [bld.var(f"c{e}", obj=h) for e in range(n_e)]
    wild = None
    if ups.default_value is not None:
        l0 = bld.var("lam_default", obj=ups.default_value)
        w = [bld.var(f"w{e}") for e in range(n_e)]
        wild = (l0, w)
    for e in range(n_e):
        mix = {lam[k]: Pk[k].get(e, 0.0) for k in range(len(pts))}
        if wild:
            mix[wild[1][e]] = 1.0
        pe = target.get(e, 0.0)
        # c_e >= pe - mix  and  c_e >= mix - pe
        row = {c[e]: 1.0, **mix}
        bld.add(row, lp.GE, pe)
        row = {c[e]: 1.0, **{j: -v for j, v in mix.items()}}
        bld.add(row, lp.GE, -pe)
    simplex = {j: 1.0 for j in lam}
    if wild:
        simplex[wild[0]] = 1.0
        row = {j: 1.0 for j in wild[1]}
        row[wild[0]] = -1.0
        bld.add(row, lp.EQ, 0.0)
    bld.add(simplex, lp.EQ, 1.0)
    sol = lp.solve(bld.build(), backend)
    if not sol.optimal:
        raise NumericalFailure(f"upper-bound evaluation LP is {sol.status}")
    return sol.objective


def point_update_ub(ups: UpsilonSet, b: ParticleBelief, y: float) -> UpsilonSet:
    ups.add(b, y)
    return ups


# ---------------------------------------------------------------- stage game

@dataclass
class StageGameUB:
    value: float
    dual_value: float
    u1: np.ndarray
    u2: np.ndarray
    belief: ParticleBelief
    n_points: int
    extra: dict = field(default_factory=dict)


def _stage_data(model, ups: UpsilonSet, b: ParticleBelief):
    n = len(b)
    succ = [[[model.successors(b.s1, b.points[i], a1, a2, check=False)
              for a2 in range(model.n_a2)] for a1 in range(model.n_a1)] for i in range(n)]
    R = np.array([[[model.reward(b.s1, b.points[i], a1, a2) for a2 in range(model.n_a2)]
                   for a1 in range(model.n_a1)] for i in range(n)])
    blocks = {}
    for a1 in range(model.n_a1):
        states = sorted({sn for i in range(n) for a2 in range(model.n_a2)
                         for sn, _, pr in succ[i][a1][a2] if pr > 0})
        for sn in states:
            reg = _Registry()
            # pushed[(i, a2)] = {support index: transition probability}
            pushed = {}
            for i in range(n):
                for a2 in range(model.n_a2):
                    row = {}
                    for s2, xn, pr in succ[i][a1][a2]:
                        if s2 == sn and pr > 0:
                            e = reg.index(xn)
                            row[e] = row.get(e, 0.0) + pr
                    if row:
                        pushed[(i, a2)] = row
            pts = ups.for_state(sn)
            if not pts and ups.default_value is None:
                raise NoPointsForAgentState(f"no upper-bound points for agent state {sn}")
            Pk = [reg.masses(bk) for bk, _ in pts]
            ys = [y for _, y in pts]
            blocks[(a1, sn)] = dict(pushed=pushed, Pk=Pk, ys=ys, n_e=len(reg.points))
    return succ, R, blocks


def build_upper_primal(model, ups: UpsilonSet, b: ParticleBelief, data):
    succ, R, blocks = data
    n = len(b)
    kappa = b.weights
    beta, h = model.beta, 0.5 * ups.spread
    u0 = ups.default_value
    bld = lp.LpBuilder(maximize=False)
    v = bld.free_var("v", obj=1.0)
    p = {(i, a2): bld.var(f"p_{i}_{a2}") for i in range(n) for a2 in range(model.n_a2)}
    blk_vars = {}
    for (a1, sn), blk in blocks.items():
        lam = [bld.var(f"lam_{a1}_{sn}_{k}") for k in range(len(blk["ys"]))]
        c = [bld.var(f"c_{a1}_{sn}_{e}") for e in range(blk["n_e"])]
        wild = None
        if u0 is not None:
            wild = (bld.var(f"lam0_{a1}_{sn}"), [bld.var(f"w_{a1}_{sn}_{e}") for e in range(blk["n_e"])])
        blk_vars[(a1, sn)] = (lam, c, wild)
    act_rows = []
    for a1 in range(model.n_a1):
        coef = {v: 1.0}
        for i in range(n):
            for a2 in range(model.n_a2):
                coef[p[(i, a2)]] = -kappa[i] * R[i, a1, a2]
        for (a1b, sn), (lam, c, wild) in blk_vars.items():
            if a1b != a1:
                continue
            for k, j in enumerate(lam):
                coef[j] = -beta * blocks[(a1b, sn)]["ys"][k]
            for j in c:
                coef[j] = -beta * h
            if wild:
                coef[wild[0]] = -beta * u0
        act_rows.append(bld.add(coef, lp.GE, 0.0, f"act_{a1}"))
    for (a1, sn), blk in blocks.items():
        lam, c, wild = blk_vars[(a1, sn)]
        for e in range(blk["n_e"]):
            # mix_e = sum_k lam_k P_k(e) + w_e ; pushed_e = sum kappa p delta
            plus = {c[e]: 1.0}
            minus = {c[e]: 1.0}
            for (i, a2), row in blk["pushed"].items():
                if e in row:
                    val = kappa[i] * row[e]
                    plus[p[(i, a2)]] = -val
                    minus[p[(i, a2)]] = val
            for k, j in enumerate(lam):
                pk = blk["Pk"][k].get(e, 0.0)
                if pk:
                    plus[j] = pk
                    minus[j] = -pk
            if wild:
                plus[wild[1][e]] = 1.0
                minus[wild[1][e]] = -1.0
            bld.add(plus, lp.GE, 0.0, f"dev+_{a1}_{sn}_{e}")
            bld.add(minus, lp.GE, 0.0, f"dev-_{a1}_{sn}_{e}")
        coef = {j: 1.0 for j in lam}
        if wild:
            coef[wild[0]] = 1.0
        for (i, a2), row in blk["pushed"].items():
            coef[p[(i, a2)]] = -kappa[i] * sum(row.values())
        bld.add(coef, lp.EQ, 0.0, f"mass_{a1}_{sn}")
        if wild:
            coef = {j: 1.0 for j in wild[1]}
            coef[wild[0]] = -1.0
            bld.add(coef, lp.EQ, 0.0, f"wild_{a1}_{sn}")
    for i in range(n):
        bld.add({p[(i, a2)]: 1.0 for a2 in range(model.n_a2)}, lp.EQ, 1.0, f"dist_{i}")
    return bld, dict(v=v, p=p, act_rows=act_rows)


def build_upper_dual(model, ups: UpsilonSet, b: ParticleBelief, data):
    """Explicit dual; its optimal ``q`` is agent 1's stage strategy."""
    succ, R, blocks = data
    n = len(b)
    kappa = b.weights
    beta, h = model.beta, 0.5 * ups.spread
    u0 = ups.default_value
    bld = lp.LpBuilder(maximize=True)
    vi = [bld.free_var(f"v_{i}", obj=float(kappa[i])) for i in range(n)]
    q = [bld.var(f"q_{a1}") for a1 in range(model.n_a1)]
    bld.add({j: 1.0 for j in q}, lp.EQ, 1.0, "simplex")
    bv = {}
    for (a1, sn), blk in blocks.items():
        w = bld.free_var(f"w_{a1}_{sn}")
        d = [bld.var(f"d_{a1}_{sn}_{e}") for e in range(blk["n_e"])]
        g = [bld.var(f"g_{a1}_{sn}_{e}") for e in range(blk["n_e"])]
        bv[(a1, sn)] = (w, d, g)
        for e in range(blk["n_e"]):
            bld.add({d[e]: 1.0, g[e]: 1.0, q[a1]: -h}, lp.LE, 0.0)
        for k, y in enumerate(blk["ys"]):
            coef = {w: 1.0, q[a1]: -y}
            for e, pk in blk["Pk"][k].items():
                coef[d[e]] = coef.get(d[e], 0.0) + pk
                coef[g[e]] = coef.get(g[e], 0.0) - pk
            bld.add(coef, lp.LE, 0.0)
        if u0 is not None:
            om = bld.free_var(f"om_{a1}_{sn}")
            bld.add({w: 1.0, q[a1]: -u0, om: -1.0}, lp.LE, 0.0)
            for e in range(blk["n_e"]):
                bld.add({om: 1.0, g[e]: -1.0, d[e]: 1.0}, lp.LE, 0.0)
    for i in range(n):
        for a2 in range(model.n_a2):
            coef = {vi[i]: 1.0}
            for a1 in range(model.n_a1):
                coef[q[a1]] = coef.get(q[a1], 0.0) - R[i, a1, a2]
            for (a1, sn), blk in blocks.items():
                row = blk["pushed"].get((i, a2))
                if not row:
                    continue
                w, d, g = bv[(a1, sn)]
                for e, pr in row.items():
                    coef[w] = coef.get(w, 0.0) - beta * pr
                    coef[d[e]] = coef.get(d[e], 0.0) - beta * pr
                    coef[g[e]] = coef.get(g[e], 0.0) + beta * pr
            bld.add(coef, lp.LE, 0.0)
    return bld, dict(q=q)


def stage_game_ub(model, ups: UpsilonSet, b: ParticleBelief, explicit_dual: bool = False,
                  backend=None) -> StageGameUB:
    data = _stage_data(model, ups, b)
    bld, lay = build_upper_primal(model, ups, b, data)
    sol = lp.solve(bld.build(), backend)
    if not sol.optimal:
        raise NumericalFailure(f"upper stage LP is {sol.status}")
    n = len(b)
    u2 = np.array([[sol.x[lay["p"][(i, a2)]] for a2 in range(model.n_a2)] for i in range(n)])
    u2 = np.clip(u2, 0.0, None)
    u2 /= u2.sum(axis=1, keepdims=True)
    if explicit_dual:
        dbld, dlay = build_upper_dual(model, ups, b, data)
        dsol = lp.solve(dbld.build(), backend)
        if not dsol.optimal:
            raise NumericalFailure(f"upper dual LP is {dsol.status}")
        u1 = np.array([dsol.x[j] for j in dlay["q"]])
        dual_value = dsol.objective
    else:
        u1 = np.array([sol.duals[r] for r in lay["act_rows"]])
        dual_value = sol.dual_objective
    u1 = np.clip(u1, 0.0, None)
    u1 = u1 / u1.sum() if u1.sum() > 0 else np.full(model.n_a1, 1.0 / model.n_a1)
    return StageGameUB(sol.objective, dual_value, u1, u2, b, len(ups), extra=dict(data=data))
