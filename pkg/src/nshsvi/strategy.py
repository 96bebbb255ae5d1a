"""Online play from solved bounds, and a seeded rollout harness.

Agent 1 keeps a particle belief and a tracked alpha function (a convex
mixture of members of Gamma).  Each move re-solves the lower stage game
with extra rows forcing the backed-up value to dominate the tracked alpha,
samples an action, and tracks the continuation alpha of the observed
successor.  Agent 2 sees everything, so it can rebuild agent 1's belief by
running the same deterministic computation on a shadow copy; it then plays
the upper stage game row of the particle that matches the true state.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import beliefs as bel
from . import lower, lp, upper
from .beliefs import ParticleBelief
from .errors import InfeasibleDominance, NumericalFailure, StateNotInSupport, ZeroProbabilityObservation

log = logging.getLogger(__name__)

DOMINANCE_SLACK = 1e-9
# weight of uniform play mixed into the assumed opponent strategy when
# updating beliefs online, so the true state never leaves the support
U2_FLOOR = 1e-6


def _tracked_value(gamma, tracked, s1, x) -> float:
    return float(sum(w * gamma.value(k, s1, x) for w, k in tracked))


def _test_points(gamma, tracked, s1):
    """Chebyshev centres of every cell of the tracked alphas in agent state ``s1``."""
    pts = []
    for _, k in tracked:
        for cell in gamma[k].fcp.for_state(s1):
            cb = cell[1].chebyshev()
            if cb is not None and cb[1] > 0:
                pts.append(cb[0])
    return pts


def dominance_stage(model, gamma, b: ParticleBelief, tracked, backend=None) -> lower.StageGameLB:
    """Lower stage game at ``b`` whose backup dominates the tracked alpha.

    The dominance rows are imposed at the particles and at the centre of
    every cell of the tracked alphas.  Points where the tracked value is
    the global lower bound are skipped since every backup attains it.
    Raises InfeasibleDominance when no strategy satisfies the rows.
    """
    L = gamma.lower
    cand = [np.asarray(x, float) for x in b.points] + _test_points(gamma, tracked, b.s1)
    targets = [_tracked_value(gamma, tracked, b.s1, x) for x in cand]
    extra = [(x, t) for i, (x, t) in enumerate(zip(cand, targets))
             if i >= len(b) and t > L + DOMINANCE_SLACK]
    n = len(b)
    pts = np.array([x for x in b.points] + [x for x, _ in extra], float).reshape(-1, model.env_dim)
    ws = np.concatenate([np.asarray(b.weights, float), np.zeros(len(extra))])
    aug = ParticleBelief(b.s1, pts, ws)
    succ, reach = lower._successor_table(model, aug)
    bld, lay = lower.build_lower_primal(model, gamma, aug, succ, reach)
    all_targets = targets[:n] + [t for _, t in extra]
    for i, t in enumerate(all_targets):
        if t > L + DOMINANCE_SLACK:
            bld.add({lay["v"][i]: 1.0}, lp.GE, t - DOMINANCE_SLACK * (1.0 + abs(t)), f"dom_{i}")
    sol = lp.solve(bld.build(), backend)
    if sol.status == lp.INFEASIBLE:
        raise InfeasibleDominance("no stage strategy dominates the tracked alpha")
    if not sol.optimal:
        raise NumericalFailure(f"dominance LP is {sol.status}")
    x = sol.x
    u1 = np.clip(np.array([x[j] for j in lay["p"]]), 0.0, None)
    u1 /= u1.sum()
    lam = {key: np.clip(x[ids], 0.0, None) for key, ids in lay["lam"].items()}
    Y = np.array([[sol.duals[lay["rows_v"][(i, a2)]] for a2 in range(model.n_a2)] for i in range(n)])
    u2 = lower._rows_to_strategy(Y)
    return lower.StageGameLB(sol.objective, sol.dual_objective, u1, u2, lam, b, L, len(gamma),
                             extra=dict(n_dominance=len(extra)))


def _observe(model, b, a1, u2, s1_next, cap, floor=U2_FLOOR):
    """Bayes update; an observation ruled out by the assumed ``u2`` falls back to uniform play."""
    u2 = (1.0 - floor) * np.asarray(u2, float) + floor / model.n_a2
    try:
        return bel.update(model, b, a1, u2, s1_next, cap), False
    except ZeroProbabilityObservation:
        uni = np.full((len(b), model.n_a2), 1.0 / model.n_a2)
        return bel.update(model, b, a1, uni, s1_next, cap), True


class Ag1Policy:
    """Agent 1 strategy driven by the lower bound."""

    def __init__(self, model, gamma: lower.GammaSet, b0: ParticleBelief,
                 particle_cap: Optional[int] = bel.DEFAULT_CAP, backend=None,
                 u2_floor: float = U2_FLOOR):
        self.model = model
        self.gamma = gamma
        self.b0 = b0
        self.cap = particle_cap
        self.u2_floor = u2_floor
        self.backend = backend
        self.fallbacks = 0
        self.reset()

    def reset(self) -> None:
        self.belief = self.b0
        self.tracked = [(1.0, self.gamma.evaluate(self.b0)[1])]
        self.stage: Optional[lower.StageGameLB] = None

    def _solve(self) -> lower.StageGameLB:
        # kept on the alpha set so a shadow copy of this policy reuses the solves
        memo = self.gamma.geo_cache
        key = ("dominance", self.backend, self.belief.key(), tuple(self.tracked))
        st = memo.get(key)
        if st is None:
            try:
                st = dominance_stage(self.model, self.gamma, self.belief, self.tracked, self.backend)
            except InfeasibleDominance:
                log.warning("dominance constraints infeasible; using the unconstrained stage game")
                st = lower.stage_game_lb(self.model, self.gamma, self.belief, backend=self.backend)
                st.extra["dominance_fallback"] = True
            memo[key] = st
        return st

    def strategy(self) -> np.ndarray:
        self.stage = self._solve()
        if self.stage.extra.get("dominance_fallback"):
            self.fallbacks += 1
        return self.stage.u1

    def act(self, rng) -> int:
        u1 = self.strategy()
        return int(rng.choice(len(u1), p=u1))

    def observe(self, a1: int, s1_next: int) -> bool:
        """Advance belief and tracked alpha; returns True when a fallback update was used."""
        st = self.stage if self.stage is not None else self._solve()
        nb, fell_back = _observe(self.model, self.belief, a1, st.u2, s1_next, self.cap,
                                 self.u2_floor)
        tracked = st.tracked_alpha(a1, s1_next)
        if fell_back or (a1, s1_next) not in st.lam:
            tracked = [(1.0, self.gamma.evaluate(nb)[1])]
        self.belief, self.tracked, self.stage = nb, tracked, None
        return fell_back


class Ag2Policy:
    """Agent 2 strategy driven by the upper bound.

    With ``mode="ag1"`` (default) the belief is rebuilt by replaying agent
    1's computation on a shadow policy, so both beliefs stay identical.
    With ``mode="own"`` agent 2 updates with its own upper-game strategy.
    """

    def __init__(self, model, upsilon: upper.UpsilonSet, b0: ParticleBelief,
                 gamma: Optional[lower.GammaSet] = None, mode: str = "ag1",
                 particle_cap: Optional[int] = bel.DEFAULT_CAP, backend=None,
                 u2_floor: float = U2_FLOOR):
        if mode not in ("ag1", "own"):
            raise ValueError(f"unknown belief mode {mode!r}")
        if mode == "ag1" and gamma is None:
            raise ValueError("belief reconstruction needs the lower-bound set")
        self.model = model
        self.ups = upsilon
        self.b0 = b0
        self.mode = mode
        self.cap = particle_cap
        self.backend = backend
        self.u2_floor = u2_floor
        self.shadow = (Ag1Policy(model, gamma, b0, particle_cap, backend, u2_floor)
                       if mode == "ag1" else None)
        self._cache: dict = {}
        self.misses = 0
        self.reset()

    def reset(self) -> None:
        self.belief = self.b0
        self.stage: Optional[upper.StageGameUB] = None
        if self.shadow is not None:
            self.shadow.reset()

    def _solve(self) -> upper.StageGameUB:
        key = self.belief.key()
        st = self._cache.get(key)
        if st is None:
            st = upper.stage_game_ub(self.model, self.ups, self.belief, backend=self.backend)
            self._cache[key] = st
        return st

    def row_for(self, s1: int, x) -> np.ndarray:
        """Stage strategy for the particle matching the true state (nearest on a miss)."""
        self.stage = self._solve()
        b = self.belief
        x = np.asarray(x, float)
        try:
            if s1 != b.s1:
                raise StateNotInSupport(f"agent state {s1} differs from belief state {b.s1}")
            d = np.max(np.abs(b.points - x), axis=1)
            i = int(np.argmin(d))
            if d[i] > bel.MERGE_TOL:
                raise StateNotInSupport(f"state {x.tolist()} is not a particle")
        except StateNotInSupport as exc:
            log.warning("%s; using the nearest particle", exc)
            self.misses += 1
            i = int(np.argmin(np.max(np.abs(b.points - x), axis=1)))
        return self.stage.u2[i]

    def act(self, s1: int, x, rng) -> int:
        row = self.row_for(s1, x)
        return int(rng.choice(len(row), p=row))

    def observe(self, a1: int, s1_next: int) -> None:
        if self.shadow is not None:
            self.shadow.strategy()
            self.shadow.observe(a1, s1_next)
            self.belief = self.shadow.belief
        else:
            st = self.stage if self.stage is not None else self._solve()
            self.belief, _ = _observe(self.model, self.belief, a1, st.u2, s1_next, self.cap,
                                      self.u2_floor)
        self.stage = None


# ---------------------------------------------------------------- rollouts

@dataclass
class Step:
    s1: int
    x: np.ndarray
    a1: int
    a2: int
    reward: float
    belief: ParticleBelief


@dataclass
class Trace:
    steps: list
    discounted_return: float
    seed: int
    stats: dict = field(default_factory=dict)

    def to_json(self, model) -> dict:
        return {
            "seed": self.seed,
            "return": self.discounted_return,
            "stats": self.stats,
            "steps": [{"state": model.state_label(s.s1), "x": [float(v) for v in s.x],
                       "a1": model.actions1[s.a1], "a2": model.actions2[s.a2],
                       "reward": s.reward, "belief": s.belief.to_json(model)}
                      for s in self.steps],
        }


def simulate(model, p1: Ag1Policy, p2: Ag2Policy, horizon: int, seed: int = 0) -> Trace:
    """One seeded rollout from a state drawn from agent 1's initial belief."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    rng = np.random.default_rng(seed)
    p1.reset()
    p2.reset()
    b0 = p1.belief
    s1 = b0.s1
    x = np.array(b0.points[int(rng.choice(len(b0), p=b0.weights))], float)
    steps, ret, disc = [], 0.0, 1.0
    fallbacks = 0
    f0, m0 = p1.fallbacks, p2.misses
    for _ in range(horizon):
        a1 = p1.act(rng)
        a2 = p2.act(s1, x, rng)
        r = model.reward(s1, x, a1, a2)
        steps.append(Step(s1, x, a1, a2, r, p1.belief))
        ret += disc * r
        disc *= model.beta
        succ = model.successors(s1, x, a1, a2, check=False)
        probs = np.array([pr for _, _, pr in succ])
        j = int(rng.choice(len(succ), p=probs / probs.sum()))
        s1, x = succ[j][0], np.array(succ[j][1], float)
        if p1.observe(a1, s1):
            fallbacks += 1
        p2.observe(a1, s1)
    stats = dict(zero_prob_updates=fallbacks, dominance_fallbacks=p1.fallbacks - f0,
                 support_misses=p2.misses - m0)
    return Trace(steps, float(ret), seed, stats)
