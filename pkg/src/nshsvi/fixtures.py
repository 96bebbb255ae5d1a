"""Builders for the bundled example models and small test games.

Every builder returns a plain model dictionary (the JSON file layout);
``model.from_dict`` turns it into a GameModel.
"""

from __future__ import annotations

import itertools

import numpy as np

from .model import from_dict


def constant_net(dim: int, n_out: int = 1, winner: int = 0) -> dict:
    b = [0.0] * n_out
    b[winner] = 1.0
    return {"layers": [{"w": [[0.0] * dim for _ in range(n_out)], "b": b}]}


def clamped_shift_cells(lower, upper, shift) -> list:
    """Translation by ``shift``; a coordinate whose move would leave the box stays put."""
    per_dim = []
    for lo, hi, d in zip(lower, upper, shift):
        if d > 0:
            per_dim.append([((lo, hi - d), d), ((hi - d, hi), 0.0)])
        elif d < 0:
            per_dim.append([((lo, lo - d), 0.0), ((lo - d, hi), d)])
        else:
            per_dim.append([((lo, hi), 0.0)])
    cells = []
    for combo in itertools.product(*per_dim):
        lo = [c[0][0] for c in combo]
        hi = [c[0][1] for c in combo]
        cells.append({"box": [lo, hi], "c": [c[1] for c in combo]})
    return cells


def identity_cells(lower, upper) -> list:
    return [{"box": [list(lower), list(upper)]}]


# ------------------------------------------------------------------ tiny games

def matrix_game(rewards, beta: float = 0.5) -> dict:
    """One state, one percept, identity dynamics, reward matrix ``rewards[a1][a2]``."""
    R = np.asarray(rewards, float)
    n1, n2 = R.shape
    return {
        "name": "matrix-game",
        "locals": ["only"], "percepts": ["only"],
        "actions1": [f"a{k}" for k in range(n1)], "actions2": [f"b{k}" for k in range(n2)],
        "beta": beta,
        "env_box": {"lower": [0.0], "upper": [1.0]},
        "networks": {"const": constant_net(1)},
        "classifiers": {"only": "const"},
        "env_delta": [{"weight": 1.0, "pieces": [{"cells": identity_cells([0.0], [1.0])}]}],
        "rewards": [{"a1": f"a{i}", "a2": f"b{j}", "regions": [{"value": float(R[i, j])}]}
                    for i in range(n1) for j in range(n2)],
        "initial_belief": {"s1": ["only", "only"], "particles": [[0.5, 1.0]]},
    }


def zero_reward_model(beta: float = 0.7) -> dict:
    d = matrix_game([[0.0, 0.0], [0.0, 0.0]], beta)
    d["name"] = "zero-reward"
    return d


def one_neuron_net() -> dict:
    """Hidden unit relu(x - 0.5); logits (0, h)."""
    return {"layers": [{"w": [[1.0]], "b": [-0.5]},
                       {"w": [[0.0], [1.0]], "b": [0.0, 0.0]}]}


def threshold_model(beta: float = 0.5) -> dict:
    """Matching pennies on [0, 1] seen through the one-neuron classifier (low / high)."""
    d = matrix_game([[1.0, -1.0], [-1.0, 1.0]], beta)
    d["name"] = "threshold"
    d["percepts"] = ["low", "high"]
    d["networks"] = {"step": one_neuron_net()}
    d["classifiers"] = {"only": "step"}
    d["initial_belief"] = {"s1": ["only", "low"], "particles": [[0.25, 1.0]]}
    return d


def nearest_center_net(centers, axes, dim) -> dict:
    """Logit k = -(L1 distance of the chosen axes to center k); argmax is the grid cell."""
    hidden_w, hidden_b = [], []
    for ax in axes:
        for c in sorted(set(cc[axes.index(ax)] for cc in centers)):
            for s in (1.0, -1.0):
                row = [0.0] * dim
                row[ax] = s
                hidden_w.append(row)
                hidden_b.append(-s * c)
    out_w = []
    for cc in centers:
        row = [0.0] * len(hidden_w)
        for ax_i, ax in enumerate(axes):
            for h, (w, b) in enumerate(zip(hidden_w, hidden_b)):
                if w[ax] != 0.0 and abs(-b / w[ax] - cc[ax_i]) < 1e-12:
                    row[h] = -1.0
        out_w.append(row)
    return {"layers": [{"w": hidden_w, "b": hidden_b},
                       {"w": out_w, "b": [0.0] * len(centers)}]}


# --------------------------------------------------------- fully observable corridor

def corridor_model(n_cells: int = 3, beta: float = 0.8, slip: float = 0.2, seed: int = 0) -> dict:
    """Fully observable 1-D corridor: the percept is the current cell.

    Both agents push the token left or right; the net move is the sum of
    the two pushes, blocked at the walls.  With probability ``slip`` the
    token does not move.  Rewards depend on the cell and the joint action.
    """
    rng = np.random.default_rng(seed)
    lo, hi = [0.0], [float(n_cells)]
    centers = [(k + 0.5,) for k in range(n_cells)]
    pers = [f"c{k}" for k in range(n_cells)]
    acts = ["L", "R"]
    move = {"L": -1.0, "R": 1.0}
    pieces_move, rewards = [], []
    for a1, a2 in itertools.product(acts, acts):
        d = move[a1] + move[a2]
        pieces_move.append({"a1": a1, "a2": a2, "cells": clamped_shift_cells(lo, hi, [d])})
        regs = []
        for k in range(n_cells):
            regs.append({"box": [[float(k)], [float(k + 1)]],
                         "value": float(np.round(rng.uniform(-3, 3), 2))})
        rewards.append({"a1": a1, "a2": a2, "regions": regs})
    branches = [{"weight": 1.0 - slip, "pieces": pieces_move}]
    if slip > 0:
        branches.append({"weight": slip, "pieces": [{"cells": identity_cells(lo, hi)}]})
    return {
        "name": "corridor",
        "locals": ["only"], "percepts": pers,
        "actions1": acts, "actions2": acts,
        "beta": beta,
        "env_box": {"lower": lo, "upper": hi},
        "networks": {"cell": nearest_center_net(centers, [0], 1)},
        "classifiers": {"only": "cell"},
        "env_delta": branches,
        "rewards": rewards,
        "initial_belief": {"s1": ["only", "c0"], "particles": [[0.5, 1.0]]},
    }


# ------------------------------------------------------ corridor pursuit-evasion

def corridor_pursuit_model(beta: float = 0.7, capture: float = 100.0, n_cells: int = 3,
                           evader_slip: float = 0.0) -> dict:
    """Pursuer and evader on a corridor of ``n_cells`` unit cells.

    The environment state is (pursuer, evader).  The pursuer only perceives
    whether the evader is ahead of it (evader - pursuer > 0.5), a linear
    two-class classifier.  Both move left, stay or right, blocked at walls.
    Sharing a cell pays ``capture`` to the pursuer.
    """
    n = float(n_cells)
    lo, hi = [0.0, 0.0], [n, n]
    acts = ["left", "stay", "right"]
    mv = {"left": -1.0, "stay": 0.0, "right": 1.0}
    pieces = [{"a1": a1, "a2": a2, "cells": clamped_shift_cells(lo, hi, [mv[a1], mv[a2]])}
              for a1, a2 in itertools.product(acts, acts)]
    branches = [{"weight": 1.0 - evader_slip, "pieces": pieces}]
    if evader_slip > 0:
        stay = [{"a1": a1, "cells": clamped_shift_cells(lo, hi, [mv[a1], 0.0])} for a1 in acts]
        branches.append({"weight": evader_slip, "pieces": stay})
    regions = []
    for i, j in itertools.product(range(n_cells), range(n_cells)):
        regions.append({"box": [[float(i), float(j)], [float(i + 1), float(j + 1)]],
                        "value": capture if i == j else 0.0})
    net = {"layers": [{"w": [[0.0, 0.0], [-1.0, 1.0]], "b": [0.0, -0.5]}]}
    return {
        "name": "corridor-pursuit",
        "locals": ["pursuer"], "percepts": ["not_ahead", "ahead"],
        "actions1": acts, "actions2": acts,
        "beta": beta,
        "env_box": {"lower": lo, "upper": hi},
        "networks": {"ahead": net},
        "classifiers": {"pursuer": "ahead"},
        "env_delta": branches,
        "rewards": [{"regions": regions}],
        "initial_belief": {"s1": ["pursuer", "ahead"],
                           "particles": [[0.5, 1.5, 0.5], [0.5, 2.5, 0.5]]},
    }


# -------------------------------------------------------- grid pursuit-evasion

def grid_pursuit_model(beta: float = 0.7, capture: float = 100.0) -> dict:
    """3x3 grid on [0,3]^2; state (xp, yp, xe, ye).

    The pursuer perceives its own grid cell through a one-hidden-layer
    ReLU classifier (L1 distance to the nine cell centres).  The pursuer
    has eight king moves, the evader four rook moves; moves that would
    leave the grid are blocked per coordinate.
    """
    lo, hi = [0.0] * 4, [3.0] * 4
    centers = [(i + 0.5, j + 0.5) for j in range(3) for i in range(3)]
    pers = [f"cell_{i + 1}{j + 1}" for j in range(3) for i in range(3)]
    pmoves = {"up": (0, 1), "down": (0, -1), "left": (-1, 0), "right": (1, 0),
              "upleft": (-1, 1), "upright": (1, 1), "downleft": (-1, -1), "downright": (1, -1)}
    emoves = {"up": (0, 1), "down": (0, -1), "left": (-1, 0), "right": (1, 0)}
    pieces = []
    for a1, (px, py) in pmoves.items():
        for a2, (ex, ey) in emoves.items():
            pieces.append({"a1": a1, "a2": a2,
                           "cells": clamped_shift_cells(lo, hi, [px, py, ex, ey])})
    regions = []
    for (i, j), (k, l) in itertools.product(itertools.product(range(3), range(3)), repeat=2):
        regions.append({"box": [[float(i), float(j), float(k), float(l)],
                                [float(i + 1), float(j + 1), float(k + 1), float(l + 1)]],
                        "value": capture if (i, j) == (k, l) else 0.0})
    return {
        "name": "pursuit-evasion",
        "locals": ["none"], "percepts": pers,
        "actions1": list(pmoves), "actions2": list(emoves),
        "beta": beta,
        "env_box": {"lower": lo, "upper": hi},
        "networks": {"grid": nearest_center_net(centers, [0, 1], 4)},
        "classifiers": {"none": "grid"},
        "env_delta": [{"weight": 1.0, "pieces": pieces}],
        "rewards": [{"regions": regions}],
        "initial_belief": {"s1": ["none", "cell_11"],
                           "particles": [[0.5, 0.5, 2.5, 2.5, 1.0]]},
    }


# ------------------------------------------------------ pedestrian and vehicle

def pedestrian_model(beta: float = 0.7, crash: float = -200.0) -> dict:
    """Vehicle speed automaton against a crossing pedestrian.

    State (x1, y1, x2, y2): previous and current pedestrian position
    relative to the vehicle.  The vehicle accelerates by -3, 0 or +3
    (speeds 0..30 km/h in steps of 3, converted to m/s for the motion).
    The intention classifier reads the lateral displacement x2 - x1.
    Positions are clamped to the box so the dynamics stay closed.
    """
    speeds = [30, 27, 24, 21, 18, 15, 12, 9, 6, 3, 0]
    accels = [-3, 0, 3]
    a2s = {"cross": -1.0, "back": 1.0}
    lo, hi = [0.0, 0.0, 0.0, 0.0], [20.0, 10.0, 20.0, 10.0]

    def g_next(v, a):
        return min(30, max(0, v + a))

    local_rules, pieces = [], []
    for v in speeds:
        for a in accels:
            local_rules.append({"loc": str(v), "a1": str(a), "next": {str(g_next(v, a)): 1.0}})
            dt = abs(g_next(v, a) - v) / abs(a) if a != 0 else 0.3
            for a2, mv in a2s.items():
                dx = mv * 4.5 * dt
                dy = -(v / 3.6) * dt - (a / 2.0) * dt * dt
                pieces.append({"loc": str(v), "a1": str(a), "a2": a2,
                               "cells": _pedestrian_cells(lo, hi, dx, dy)})
    hidden = {"w": [[-1.0, 0.0, 1.0, 0.0], [1.0, 0.0, -1.0, 0.0]], "b": [0.0, 0.0]}
    out = {"w": [[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]], "b": [0.0, 0.5, 0.0]}
    crash_regions = [
        {"box": [[None, None, 0.0, 0.0], [None, None, 0.5, 2.5]], "value": crash},
        {"box": [[None, None, 0.5, None], [None, None, None, None]], "value": 0.0},
        {"box": [[None, None, 0.0, 2.5], [None, None, 0.5, None]], "value": 0.0},
    ]
    return {
        "name": "pedestrian-vehicle",
        "locals": [str(v) for v in speeds],
        "percepts": ["unlikely", "likely", "very_likely"],
        "actions1": [str(a) for a in accels], "actions2": list(a2s),
        "beta": beta,
        "env_box": {"lower": lo, "upper": hi},
        "networks": {"intention": {"layers": [hidden, out]}},
        "classifiers": {str(v): "intention" for v in speeds},
        "local_delta": local_rules,
        "env_delta": [{"weight": 1.0, "pieces": pieces}],
        "rewards": [{"regions": crash_regions}],
        "initial_belief": {"s1": ["30", "very_likely"],
                           "particles": [[4.0, 9.0, 3.4, 9.5, 1.0]]},
    }


def _pedestrian_cells(lo, hi, dx, dy):
    """x1' = x2, y1' = y2, x2' = clamp(x2 + dx), y2' = clamp(y2 + dy)."""
    def splits(k, d):
        a, b = lo[k], hi[k]
        if d > 0 and b - d > a:
            return [((a, b - d), "move"), ((b - d, b), "hi")]
        if d > 0:
            return [((a, b), "hi")]
        if d < 0 and a - d < b:
            return [((a, a - d), "lo"), ((a - d, b), "move")]
        if d < 0:
            return [((a, b), "lo")]
        return [((a, b), "move")]

    cells = []
    for (xr, xm), (yr, ym) in itertools.product(splits(2, dx), splits(3, dy)):
        M = np.zeros((4, 4))
        c = np.zeros(4)
        M[0, 2] = 1.0
        M[1, 3] = 1.0
        for k, mode, d in ((2, xm, dx), (3, ym, dy)):
            if mode == "move":
                M[k, k] = 1.0
                c[k] = d
            else:
                c[k] = lo[k] if mode == "lo" else hi[k]
        cells.append({"box": [[None, None, xr[0], yr[0]], [None, None, xr[1], yr[1]]],
                      "M": M.tolist(), "c": c.tolist()})
    return cells


# ------------------------------------------------------------- random games

def random_model(seed: int, beta: float = 0.7) -> dict:
    """Small random game on [0,3]^2 with two local states and two percepts."""
    rng = np.random.default_rng(seed)
    lo, hi = [0.0, 0.0], [3.0, 3.0]
    locs, pers = ["l0", "l1"], ["p0", "p1"]
    acts1, acts2 = ["a", "b"], ["c", "d"]
    nets = {}
    for loc in locs:
        normal = rng.normal(size=2)
        normal /= np.linalg.norm(normal)
        point = rng.uniform(1.0, 2.0, size=2)
        nets[loc] = {"layers": [{"w": [[0.0, 0.0], normal.tolist()],
                                 "b": [0.0, float(-normal @ point)]}]}
    local_rules = []
    for loc, a1, a2 in itertools.product(locs, acts1, acts2):
        q = float(np.round(rng.uniform(0.2, 0.8), 3))
        local_rules.append({"loc": loc, "a1": a1, "a2": a2, "next": {"l0": q, "l1": 1.0 - q}})
    pieces_a, pieces_b = [], []
    for a1, a2 in itertools.product(acts1, acts2):
        shift = rng.integers(-1, 2, size=2).astype(float)
        pieces_a.append({"a1": a1, "a2": a2, "cells": clamped_shift_cells(lo, hi, shift.tolist())})
        shift2 = rng.integers(-1, 2, size=2).astype(float) * 0.5
        pieces_b.append({"a1": a1, "a2": a2, "cells": clamped_shift_cells(lo, hi, shift2.tolist())})
    rewards = []
    for a1, a2 in itertools.product(acts1, acts2):
        cut = float(np.round(rng.uniform(0.5, 2.5), 3))
        rewards.append({"a1": a1, "a2": a2, "regions": [
            {"box": [[0.0, 0.0], [cut, 3.0]], "value": float(np.round(rng.uniform(-5, 5), 2))},
            {"box": [[cut, 0.0], [3.0, 3.0]], "value": float(np.round(rng.uniform(-5, 5), 2))}]})
    return {
        "name": f"random-{seed}",
        "locals": locs, "percepts": pers, "actions1": acts1, "actions2": acts2,
        "beta": beta,
        "env_box": {"lower": lo, "upper": hi},
        "networks": nets,
        "classifiers": {loc: loc for loc in locs},
        "local_delta": local_rules,
        "env_delta": [{"weight": 0.7, "pieces": pieces_a}, {"weight": 0.3, "pieces": pieces_b}],
        "rewards": rewards,
    }


def random_belief(model, rng, n: int = 3, s1=None):
    """Random particle belief; points are drawn until they match one agent state."""
    from . import geometry as geo
    from .beliefs import make_belief
    lo, hi = geo.bounding_box(model.env_box)
    pts = []
    while len(pts) < n:
        x = rng.uniform(lo, hi)
        loc = int(rng.integers(len(model.locals))) if s1 is None else model.split_state(s1)[0]
        s = model.agent_state(loc, model.obs(loc, x))
        if s1 is None:
            s1 = s
        if s == s1:
            pts.append(x)
    w = rng.uniform(0.2, 1.0, size=n)
    return make_belief(model, s1, np.array(pts), w)


def data_path(name: str) -> str:
    """Path of a model bundled with the package (``toy.json``, ``corridor.json``, ...)."""
    from importlib.resources import files
    return str(files("nshsvi") / "data" / name)


def build(name: str, **kw):
    builders = {"matrix": matrix_game, "zero": zero_reward_model, "threshold": threshold_model,
                "corridor": corridor_model,
                "corridor_pursuit": corridor_pursuit_model, "grid_pursuit": grid_pursuit_model,
                "pedestrian": pedestrian_model, "random": random_model}
    return from_dict(builders[name](**kw))
