"""Heuristic search value iteration over particle beliefs.

Each trial walks forward from the initial belief.  At every step both
stage games are solved, both bounds are updated, and the walk continues
to the (action, observation) pair with the largest probability-weighted
excess gap.  On the way back every visited belief is updated again.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import beliefs as bel
from . import lower, upper
from .errors import LimitReached

log = logging.getLogger(__name__)


@dataclass
class HsviConfig:
    epsilon: float = 0.1
    epsilon_bar: Optional[float] = None
    max_seconds: Optional[float] = 7200.0
    max_iterations: Optional[int] = None
    max_depth: Optional[int] = None
    seed: int = 0
    particle_cap: Optional[int] = bel.DEFAULT_CAP
    init_mode: str = upper.MAX_ABS_REWARD

    def resolved_epsilon_bar(self, spread: float, beta: float) -> float:
        if self.epsilon_bar is not None:
            return self.epsilon_bar
        if spread <= 0:
            return 0.0
        return (1.0 - beta) * self.epsilon / (4.0 * spread)

    def check(self, spread: float, beta: float) -> None:
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        eb = self.resolved_epsilon_bar(spread, beta)
        if spread > 0 and not 0.0 < eb < (1.0 - beta) * self.epsilon / (2.0 * spread):
            raise ValueError("epsilon_bar outside its admissible interval")


def rho(t: int, cfg: HsviConfig, L: float, U: float, beta: float) -> float:
    spread = U - L
    eb = cfg.resolved_epsilon_bar(spread, beta)
    r = cfg.epsilon
    for _ in range(t):
        r = (r - 2.0 * spread * eb) / beta
    return r


def t_max(cfg: HsviConfig, L: float, U: float, beta: float, cap: int = 100000) -> int:
    spread = U - L
    eb = cfg.resolved_epsilon_bar(spread, beta)
    r, t = cfg.epsilon, 0
    while r < spread and t < cap:
        r = (r - 2.0 * spread * eb) / beta
        t += 1
    return t


@dataclass
class TraceRow:
    iter: int
    lb: float
    ub: float
    gamma_size: int
    upsilon_size: int
    seconds: float


@dataclass
class SolveResult:
    gamma: lower.GammaSet
    upsilon: upper.UpsilonSet
    trace: list
    status: str
    lb: float
    ub: float
    iterations: int
    stats: dict = field(default_factory=dict)


class Solver:
    def __init__(self, model, cfg: HsviConfig, gamma=None, upsilon=None):
        self.model = model
        self.cfg = cfg
        self.gamma = gamma if gamma is not None else lower.init_gamma(model)
        self.ups = upsilon if upsilon is not None else upper.init_upsilon(model, cfg.init_mode)
        self.L = self.gamma.lower
        self.U = self.ups.upper_init
        cfg.check(self.U - self.L, model.beta)
        self.T = t_max(cfg, self.L, self.U, model.beta)
        self._rho = [cfg.epsilon]
        self.stats = dict(updates=0, explored=0, max_depth=0, depth_limit_hits=0,
                          bracket_violations=0)
        self._deadline = None

    # ----------------------------------------------------------- helpers
    def rho(self, t: int) -> float:
        eb = self.cfg.resolved_epsilon_bar(self.U - self.L, self.model.beta)
        while len(self._rho) <= t:
            self._rho.append((self._rho[-1] - 2.0 * (self.U - self.L) * eb) / self.model.beta)
        return self._rho[t]

    def lb(self, b) -> float:
        return self.gamma.evaluate(b)[0]

    def ub(self, b) -> float:
        return upper.evaluate_ub(self.ups, b)

    def excess(self, b, t: int) -> float:
        return self.ub(b) - self.lb(b) - self.rho(t)

    def _out_of_time(self) -> bool:
        return self._deadline is not None and time.perf_counter() > self._deadline

    def update(self, b, st_lb=None, st_ub=None) -> None:
        """Point-based update of both bounds at ``b``."""
        if st_lb is None or st_lb.n_alpha != len(self.gamma):
            st_lb = lower.stage_game_lb(self.model, self.gamma, b)
        lower.point_update_lb(self.model, self.gamma, b, st_lb)
        if st_ub is None or st_ub.n_points != len(self.ups):
            st_ub = upper.stage_game_ub(self.model, self.ups, b)
        upper.point_update_ub(self.ups, b, st_ub.value)
        self.stats["updates"] += 1
        if self.lb(b) > self.ub(b) + 1e-6 * (1.0 + abs(self.ub(b))):
            self.stats["bracket_violations"] += 1
            log.warning("lower bound above upper bound at an explored belief")

    def select_pair(self, b, t: int, u1_ub, u2_lb):
        return select_pair(self.model, self.gamma, self.ups, b, u1_ub, u2_lb,
                           lambda bb: self.excess(bb, t + 1), self.cfg.particle_cap)

    # ----------------------------------------------------------- explore
    def explore(self, b0) -> None:
        depth_cap = self.T if self.cfg.max_depth is None else min(self.T, self.cfg.max_depth)
        path = []
        b, t = b0, 0
        while True:
            st_lb = lower.stage_game_lb(self.model, self.gamma, b)
            st_ub = upper.stage_game_ub(self.model, self.ups, b)
            self.update(b, st_lb, st_ub)
            self.stats["explored"] += 1
            self.stats["max_depth"] = max(self.stats["max_depth"], t)
            if self._out_of_time():
                break
            pick = self.select_pair(b, t, st_ub.u1, st_lb.u2)
            if pick is None or pick[2] <= 0:
                break
            if t + 1 > depth_cap:
                self.stats["depth_limit_hits"] += 1
                break
            path.append(b)
            b, t = pick[3], t + 1
        for bp in reversed(path):
            if self._out_of_time():
                break
            self.update(bp)

    # ----------------------------------------------------------- main loop
    def solve(self, b0, raise_on_limit: bool = True) -> SolveResult:
        start = time.perf_counter()
        if self.cfg.max_seconds is not None:
            self._deadline = start + self.cfg.max_seconds
        trace = []

        def record(it):
            trace.append(TraceRow(it, self.lb(b0), self.ub(b0), len(self.gamma), len(self.ups),
                                  time.perf_counter() - start))

        record(0)
        it = 0
        status = "converged"
        while trace[-1].ub - trace[-1].lb > self.cfg.epsilon:
            if self.cfg.max_iterations is not None and it >= self.cfg.max_iterations:
                status = "limit"
                break
            if self._out_of_time():
                status = "limit"
                break
            self.explore(b0)
            it += 1
            record(it)
        res = SolveResult(self.gamma, self.ups, trace, status, trace[-1].lb, trace[-1].ub, it,
                          dict(self.stats, t_max=self.T))
        if status == "limit" and raise_on_limit:
            raise LimitReached(f"stopped after {it} iterations with gap "
                               f"{res.ub - res.lb:.6g}", res)
        return res


def select_pair(model, gamma, ups, b, u1_ub, u2_lb, excess_fn, cap=None):
    """Pair (a1, s1') maximising P(a1, s1') times the excess gap of the updated belief.

    Returns (a1, s1', score, next belief) or None when nothing is reachable.
    Ties keep the lexicographically first pair.
    """
    best = None
    for a1 in range(model.n_a1):
        if u1_ub[a1] <= 0:
            continue
        push = bel.pushforward(model, b, a1, u2_lb)
        for sn in sorted(push):
            pts, ws = push[sn]
            mass = float(sum(ws))
            if mass <= 0:
                continue
            prob = float(u1_ub[a1]) * mass
            nb = bel.make_belief(model, sn, np.array(pts), np.array(ws), check=False, cap=cap)
            score = prob * excess_fn(nb)
            if best is None or score > best[2]:
                best = (a1, sn, score, nb)
    return best


def solve(model, b0, cfg: Optional[HsviConfig] = None, raise_on_limit: bool = True) -> SolveResult:
    cfg = cfg or HsviConfig()
    return Solver(model, cfg).solve(b0, raise_on_limit)


def trace_to_csv(trace: list) -> str:
    lines = ["iter,lb,ub,gamma_size,upsilon_size,seconds"]
    for r in trace:
        lines.append(f"{r.iter},{r.lb:.17g},{r.ub:.17g},{r.gamma_size},{r.upsilon_size},{r.seconds:.6f}")
    return "\n".join(lines) + "\n"
