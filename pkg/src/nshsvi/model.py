"""Game model: loading, validation and transition semantics.

Agent 1 has a discrete local state and a percept produced by a ReLU
classifier of the continuous environment state.  Agent states are indexed
``loc * n_percepts + percept``.  Environment dynamics are a weighted sum of
branches, each piecewise affine over cells of the environment box.

Model file layout (JSON)::

    {
      "locals": [...], "percepts": [...],
      "actions1": [...], "actions2": [...],
      "beta": 0.7,
      "env_box": {"lower": [...], "upper": [...]},
      "networks": {"name": {"layers": [...]} | {"weights_file": "w.json"}},
      "classifiers": {"<loc>": "<network name>"},
      "local_delta": [{"loc":.., "percept":.., "a1":.., "a2":.., "next": {"<loc>": p}}],
      "env_delta": [{"weight": mu, "pieces": [{"loc":.., "a1":.., "a2":..,
                     "cells": [{"box"|"halfspaces":.., "M": [[..]], "c": [..]}]}]}],
      "rewards": [{"loc":.., "a1":.., "a2":.., "regions": [{"box"|"halfspaces":.., "value": r}]}],
      "initial_belief": {"s1": ["<loc>", "<percept>"], "particles": [[x.., weight]]}
    }

Selector keys (loc, percept, a1, a2) may be omitted or null to match
anything; the first matching entry wins.  A state with no matching
``local_delta`` rule keeps its local state.  Region boxes may use null
entries for "the environment bound".  Omitted ``M`` means identity and
omitted ``c`` means zero.
"""

from __future__ import annotations

import itertools
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import geometry as geo
from .errors import IncompatibleState, ModelError, NoRegion
from .relu import ReluNetwork

MERGE_TOL = 1e-9


@dataclass(frozen=True)
class DynamicsCell:
    cell: geo.Polytope
    M: np.ndarray
    c: np.ndarray

    def apply(self, x):
        return self.M @ x + self.c


@dataclass(eq=False)
class GameModel:
    locals: list
    percepts: list
    actions1: list
    actions2: list
    beta: float
    env_box: geo.Polytope
    classifiers: list                 # ReluNetwork per local state
    local_delta: np.ndarray           # [loc, per, a1, a2, loc']
    branch_weights: list
    dynamics: list                    # per branch: {(loc, a1, a2): [DynamicsCell]}
    rewards: dict                     # {(loc, a1, a2): [(Polytope, value)]}
    initial_belief: Optional[dict] = None
    name: str = ""
    source: dict = field(default_factory=dict, repr=False)
    _succ_cache: dict = field(default_factory=dict, repr=False)
    _phi_p: Optional[geo.Fcp] = field(default=None, repr=False)
    _reward_fcp: dict = field(default_factory=dict, repr=False)

    # -------------------------------------------------------------- indexing
    @property
    def env_dim(self) -> int:
        return self.env_box.dim

    @property
    def n_agent_states(self) -> int:
        return len(self.locals) * len(self.percepts)

    @property
    def n_a1(self) -> int:
        return len(self.actions1)

    @property
    def n_a2(self) -> int:
        return len(self.actions2)

    def agent_state(self, loc: int, per: int) -> int:
        return loc * len(self.percepts) + per

    def split_state(self, s1: int):
        return divmod(s1, len(self.percepts))

    def state_label(self, s1: int):
        loc, per = self.split_state(s1)
        return [self.locals[loc], self.percepts[per]]

    def state_index(self, pair) -> int:
        loc, per = pair
        try:
            return self.agent_state(self.locals.index(loc), self.percepts.index(per))
        except ValueError as exc:
            raise ModelError(f"unknown agent state {pair}") from exc

    # ------------------------------------------------------------ semantics
    def obs(self, loc: int, x) -> int:
        return self.classifiers[loc].argmax(x)

    def compatible(self, s1: int, x) -> bool:
        loc, per = self.split_state(s1)
        return self.obs(loc, x) == per

    def dynamics_cell(self, branch: int, loc: int, a1: int, a2: int, x) -> DynamicsCell:
        cells = self.dynamics[branch][(loc, a1, a2)]
        k = geo.locate([(0, d.cell) for d in cells], 0, x)
        return cells[k]

    def successors(self, s1: int, x, a1: int, a2: int, check: bool = True) -> list:
        """Successor distribution as a list of (s1', x', prob), equal states merged."""
        x = np.asarray(x, float)
        key = (s1, x.tobytes(), a1, a2)
        hit = self._succ_cache.get(key)
        if hit is not None:
            return hit
        if check and not self.compatible(s1, x):
            raise IncompatibleState(f"point {x.tolist()} does not produce agent state {s1}")
        loc, per = self.split_state(s1)
        row = self.local_delta[loc, per, a1, a2]
        out: list = []
        for bi, mu in enumerate(self.branch_weights):
            if mu <= 0:
                continue
            xn = self.dynamics_cell(bi, loc, a1, a2, x).apply(x)
            for ln in np.flatnonzero(row > 0):
                s_next = self.agent_state(int(ln), self.obs(int(ln), xn))
                prob = float(row[ln] * mu)
                for k, (s_o, x_o, p_o) in enumerate(out):
                    if s_o == s_next and np.max(np.abs(x_o - xn)) <= MERGE_TOL:
                        out[k] = (s_o, x_o, p_o + prob)
                        break
                else:
                    out.append((s_next, xn, prob))
        if len(self._succ_cache) > 500000:
            self._succ_cache.clear()
        self._succ_cache[key] = out
        return out

    def reward(self, s1: int, x, a1: int, a2: int) -> float:
        loc, _ = self.split_state(s1)
        regs = self.rewards[(loc, a1, a2)]
        k = geo.locate([(0, p) for p, _ in regs], 0, x)
        return regs[k][1]

    def reward_regions(self, s1: int, a1: int, a2: int) -> list:
        loc, _ = self.split_state(s1)
        return self.rewards[(loc, a1, a2)]

    def reward_function(self, a1: int, a2: int) -> geo.PwcFunction:
        """Reward for a joint action as a PWC function over all agent states."""
        key = (a1, a2)
        if key not in self._reward_fcp:
            regs, vals = [], []
            for s1 in range(self.n_agent_states):
                for cell, v in self.reward_regions(s1, a1, a2):
                    regs.append((s1, cell))
                    vals.append(v)
            self._reward_fcp[key] = geo.PwcFunction(geo.Fcp(tuple(regs)), tuple(vals))
        return self._reward_fcp[key]

    def value_bounds(self):
        vals = [v for regs in self.rewards.values() for _, v in regs]
        lo, hi = min(vals), max(vals)
        return lo / (1.0 - self.beta), hi / (1.0 - self.beta)

    def max_abs_reward(self) -> float:
        return max(abs(v) for regs in self.rewards.values() for _, v in regs)

    def perception_fcp(self) -> geo.Fcp:
        if self._phi_p is None:
            from .relu import perception_fcp
            self._phi_p = perception_fcp(self)
        return self._phi_p

    def set_perception_fcp(self, fcp: geo.Fcp) -> None:
        self._phi_p = fcp


# ------------------------------------------------------------------ loading

def _index(names: list, value, what: str):
    if value is None:
        return None
    if isinstance(value, int) and not isinstance(value, bool):
        if 0 <= value < len(names):
            return value
    elif value in names:
        return names.index(value)
    raise ModelError(f"unknown {what} {value!r}")


def _region(desc: dict, env_lo, env_hi, e: int) -> geo.Polytope:
    if "box" in desc:
        lo, hi = desc["box"]
        lo = [env_lo[k] if v is None else float(v) for k, v in enumerate(lo)]
        hi = [env_hi[k] if v is None else float(v) for k, v in enumerate(hi)]
        if len(lo) != e or len(hi) != e:
            raise ModelError("region box has wrong dimension")
        return geo.box(lo, hi)
    if "halfspaces" in desc:
        hs = np.array(desc["halfspaces"], float).reshape(-1, e + 1)
        env = geo.box(env_lo, env_hi)
        return geo.Polytope(np.vstack([hs[:, :e], env.A]), np.concatenate([hs[:, e], env.b]))
    return geo.box(env_lo, env_hi)


def _matches(entry: dict, **sel) -> bool:
    for k, v in sel.items():
        want = entry.get(k)
        if want is not None and want != v:
            return False
    return True


def from_dict(data: dict, base_dir: str = ".") -> GameModel:
    try:
        return _from_dict(data, base_dir)
    except ModelError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ModelError(f"malformed model: {exc!r}") from exc


def _from_dict(data: dict, base_dir: str) -> GameModel:
    locs = list(data["locals"])
    pers = list(data["percepts"])
    acts1 = list(data["actions1"])
    acts2 = list(data["actions2"])
    beta = float(data["beta"])
    box = data["env_box"]
    env_lo = [float(v) for v in box["lower"]]
    env_hi = [float(v) for v in box["upper"]]
    e = len(env_lo)
    env_box = geo.box(env_lo, env_hi)

    nets = {}
    for name, desc in data.get("networks", {}).items():
        if "weights_file" in desc:
            nets[name] = ReluNetwork.load(os.path.join(base_dir, desc["weights_file"]))
        else:
            nets[name] = ReluNetwork.from_json(desc)
    classifiers = []
    for loc in locs:
        ref = data["classifiers"].get(loc)
        if ref is None:
            raise ModelError(f"no classifier for local state {loc!r}")
        if isinstance(ref, str):
            if ref not in nets:
                raise ModelError(f"unknown network {ref!r}")
            classifiers.append(nets[ref])
        else:
            key = json.dumps(ref, sort_keys=True)
            nets.setdefault(key, ReluNetwork.from_json(ref))
            classifiers.append(nets[key])
    for net in classifiers:
        if net.input_dim != e or net.output_dim != len(pers):
            raise ModelError("classifier dimensions do not match env box / percepts")

    def norm_rule(r):
        return {"loc": _index(locs, r.get("loc"), "local state"),
                "percept": _index(pers, r.get("percept"), "percept"),
                "a1": _index(acts1, r.get("a1"), "action"),
                "a2": _index(acts2, r.get("a2"), "action")}

    L, P, A1, A2 = len(locs), len(pers), len(acts1), len(acts2)
    delta = np.zeros((L, P, A1, A2, L))
    rules = [(norm_rule(r), r["next"]) for r in data.get("local_delta", [])]
    for l, p, a1, a2 in itertools.product(range(L), range(P), range(A1), range(A2)):
        for sel, nxt in rules:
            if _matches(sel, loc=l, percept=p, a1=a1, a2=a2):
                for ln, pr in nxt.items():
                    delta[l, p, a1, a2, _index(locs, ln, "local state")] += float(pr)
                break
        else:
            delta[l, p, a1, a2, l] = 1.0

    weights, dynamics = [], []
    for br in data["env_delta"]:
        weights.append(float(br["weight"]))
        entries = []
        for pc in br["pieces"]:
            cells = []
            for cs in pc["cells"]:
                M = np.array(cs.get("M", np.eye(e)), float).reshape(e, e)
                c = np.array(cs.get("c", np.zeros(e)), float).reshape(e)
                cells.append(DynamicsCell(_region(cs, env_lo, env_hi, e), M, c))
            entries.append((norm_rule(pc), tuple(cells)))
        table = {}
        for l, a1, a2 in itertools.product(range(L), range(A1), range(A2)):
            for sel, cells in entries:
                if _matches(sel, loc=l, a1=a1, a2=a2):
                    table[(l, a1, a2)] = cells
                    break
            else:
                raise ModelError(f"no dynamics for ({locs[l]}, {acts1[a1]}, {acts2[a2]})")
        dynamics.append(table)

    rewards = {}
    rentries = []
    for rw in data["rewards"]:
        regs = tuple((_region(rs, env_lo, env_hi, e), float(rs["value"])) for rs in rw["regions"])
        rentries.append((norm_rule(rw), regs))
    for l, a1, a2 in itertools.product(range(L), range(A1), range(A2)):
        for sel, regs in rentries:
            if _matches(sel, loc=l, a1=a1, a2=a2):
                rewards[(l, a1, a2)] = regs
                break
        else:
            raise ModelError(f"no reward table for ({locs[l]}, {acts1[a1]}, {acts2[a2]})")

    return GameModel(locs, pers, acts1, acts2, beta, env_box, classifiers, delta, weights,
                     dynamics, rewards, data.get("initial_belief"), data.get("name", ""), data)


def load(path: str) -> GameModel:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelError(f"cannot read model {path}: {exc}") from exc
    return from_dict(data, os.path.dirname(os.path.abspath(path)))


# --------------------------------------------------------------- validation

def validate(model: GameModel, n_samples: int = 1000, seed: int = 0) -> list:
    """List of human-readable violations; empty means the model is valid."""
    issues = []
    if not 0.0 < model.beta < 1.0:
        issues.append(f"discount: beta={model.beta} outside (0, 1)")
    wsum = sum(model.branch_weights)
    if abs(wsum - 1.0) > 1e-9 or any(w < 0 for w in model.branch_weights):
        issues.append(f"branch weights: sum to {wsum!r}")
    rows = model.local_delta.sum(axis=-1)
    if np.any(np.abs(rows - 1.0) > 1e-9) or np.any(model.local_delta < 0):
        issues.append("local transitions: a row does not sum to 1")

    dom = {0: model.env_box}
    seen = {}
    for bi, table in enumerate(model.dynamics):
        for key, cells in table.items():
            ident = id(cells)
            if ident not in seen:
                fcp = geo.Fcp(tuple((0, d.cell) for d in cells))
                seen[ident] = geo.check_partition(fcp, dom)
            for msg in seen[ident]:
                issues.append(f"coverage: dynamics branch {bi} at {_key_label(model, key)}: {msg}")
    rseen = {}
    for key, regs in model.rewards.items():
        ident = id(regs)
        if ident not in rseen:
            rseen[ident] = geo.check_partition(geo.Fcp(tuple((0, p) for p, _ in regs)), dom)
        for msg in rseen[ident]:
            issues.append(f"coverage: reward table at {_key_label(model, key)}: {msg}")

    rng = np.random.default_rng(seed)
    X = geo.sample_uniform(model.env_box, n_samples, rng)
    lo, hi = geo.bounding_box(model.env_box)
    for bi, table in enumerate(model.dynamics):
        bad = set()
        for key, cells in table.items():
            for x in X:
                try:
                    d = model.dynamics_cell(bi, key[0], key[1], key[2], x)
                except NoRegion:
                    continue
                if not geo.contains(model.env_box, d.apply(x), 1e-9):
                    bad.add(key)
                    break
        for key in sorted(bad):
            issues.append(f"closure: branch {bi} at {_key_label(model, key)} leaves the env box")
    if model.initial_belief is not None:
        try:
            from .beliefs import belief_from_json
            belief_from_json(model, model.initial_belief)
        except Exception as exc:  # report, do not raise
            issues.append(f"initial belief: {exc}")
    return issues


def _key_label(model, key):
    l, a1, a2 = key
    return f"({model.locals[l]}, {model.actions1[a1]}, {model.actions2[a2]})"
