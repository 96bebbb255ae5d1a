"""Particle beliefs of agent 1 over the environment state, with Bayes updates."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import IncompatibleState, ZeroProbabilityObservation

log = logging.getLogger(__name__)

MERGE_TOL = 1e-9
DEFAULT_CAP = 4096


@dataclass(frozen=True, eq=False)
class ParticleBelief:
    s1: int
    points: np.ndarray     # (n, e)
    weights: np.ndarray    # (n,)

    def __len__(self):
        return len(self.weights)

    def key(self) -> tuple:
        return (self.s1, self.points.tobytes(), self.weights.tobytes())

    def to_json(self, model) -> dict:
        return {"s1": model.state_label(self.s1),
                "particles": [list(map(float, x)) + [float(k)]
                              for x, k in zip(self.points, self.weights)]}


def merge_particles(points, weights, tol: float = MERGE_TOL):
    """Sum the weights of points closer than ``tol`` in L-infinity, keeping first-seen order."""
    points = np.asarray(points, float)
    weights = np.asarray(weights, float)
    reps: list = []
    out_w: list = []
    for x, w in zip(points, weights):
        if reps:
            R = np.asarray(reps)
            d = np.max(np.abs(R - x), axis=1)
            k = int(np.argmin(d))
            if d[k] <= tol:
                out_w[k] += w
                continue
        reps.append(x)
        out_w.append(w)
    e = points.shape[1] if points.ndim == 2 else 0
    return np.asarray(reps, float).reshape(-1, e), np.asarray(out_w, float)


def make_belief(model, s1: int, points, weights, check: bool = True,
                cap: Optional[int] = None) -> ParticleBelief:
    points = np.atleast_2d(np.asarray(points, float))
    weights = np.asarray(weights, float).reshape(-1)
    if len(points) != len(weights):
        raise ValueError("one weight per particle required")
    keep = weights > 0
    points, weights = merge_particles(points[keep], weights[keep])
    if weights.sum() <= 0:
        raise ValueError("belief has no positive weight")
    if cap is not None and len(weights) > cap:
        order = sorted(range(len(weights)), key=lambda i: (-weights[i], i))[:cap]
        order.sort()
        log.warning("belief truncated from %d to %d particles", len(weights), cap)
        points, weights = points[order], weights[order]
    weights = weights / weights.sum()
    if check and model is not None:
        for x in points:
            if not model.compatible(s1, x):
                raise IncompatibleState(f"particle {x.tolist()} incompatible with agent state {s1}")
    points.setflags(write=False)
    weights.setflags(write=False)
    return ParticleBelief(int(s1), points, weights)


def belief_from_json(model, data: dict, check: bool = True) -> ParticleBelief:
    s1 = model.state_index(data["s1"])
    parts = np.array(data["particles"], float)
    e = model.env_dim
    if parts.ndim != 2 or parts.shape[1] != e + 1:
        raise ValueError(f"particles must have {e} coordinates plus a weight")
    return make_belief(model, s1, parts[:, :e], parts[:, e], check=check)


def pushforward(model, b: ParticleBelief, a1: int, u2) -> dict:
    """Unnormalised successor mass per next agent state.

    Returns {s1': (points list, weights list)} with weights
    kappa_i * u2(a2|i) * transition probability.
    """
    u2 = np.asarray(u2, float)
    out: dict = {}
    for i, (x, k) in enumerate(zip(b.points, b.weights)):
        for a2 in range(model.n_a2):
            q = u2[i, a2]
            if q <= 0:
                continue
            for s_next, xn, prob in model.successors(b.s1, x, a1, a2, check=False):
                pts, ws = out.setdefault(s_next, ([], []))
                pts.append(xn)
                ws.append(k * q * prob)
    return out


def observation_probs(model, b: ParticleBelief, a1: int, u2) -> dict:
    """P(s1' | b, a1, u2) for every reachable s1'."""
    return {s: float(sum(ws)) for s, (_, ws) in pushforward(model, b, a1, u2).items()}


def update(model, b: ParticleBelief, a1: int, u2, s1_next: int,
           cap: Optional[int] = None) -> ParticleBelief:
    """Bayes update after agent 1 plays ``a1`` and observes ``s1_next``."""
    push = pushforward(model, b, a1, u2)
    if s1_next not in push or sum(push[s1_next][1]) <= 0:
        raise ZeroProbabilityObservation(f"agent state {s1_next} has zero probability")
    pts, ws = push[s1_next]
    return make_belief(model, s1_next, np.array(pts), np.array(ws), check=False, cap=cap)


def joint_prob(model, b: ParticleBelief, u1, u2, a1: int, s1_next: int) -> float:
    if u1[a1] <= 0:
        return 0.0
    probs = observation_probs(model, b, a1, u2)
    return float(u1[a1] * probs.get(s1_next, 0.0))


def expect(f, b: ParticleBelief) -> float:
    """Sum of kappa_i * f(s1, x_i); ``f`` is a PWC function or any callable (s1, x)."""
    fn = f.value if hasattr(f, "value") else f
    return float(sum(k * fn(b.s1, x) for x, k in zip(b.points, b.weights)))


def check_stage_strategy(u, rows: Optional[int] = None, tol: float = 1e-9) -> np.ndarray:
    u = np.asarray(u, float)
    if np.any(u < -tol):
        raise ValueError("negative probability")
    s = u.sum(axis=-1)
    if np.any(np.abs(s - 1.0) > tol):
        raise ValueError("strategy rows must sum to 1")
    if rows is not None and u.shape[0] != rows:
        raise ValueError("one strategy row per particle required")
    return u
