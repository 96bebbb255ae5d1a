"""Decision regions of feed-forward ReLU classifiers.

The input domain is split one neuron at a time (depth first).  A branch is
kept only if its cell still has an inscribed ball of positive radius, so
every returned piece is full dimensional.  On each piece the network is a
single affine map, and argmax labelling splits the piece further along
pairwise logit differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import geometry as geo
from .errors import DimensionMismatch, DomainUnbounded, PieceBudgetExceeded

DEFAULT_PIECE_CAP = 10 ** 6


class ReluNetwork:
    """Hidden layers use ReLU, the last layer is linear (one logit per percept)."""

    def __init__(self, layers):
        self.layers = []
        for w, b in layers:
            w = np.array(w, dtype=float, ndmin=2)
            b = np.array(b, dtype=float).reshape(-1)
            if w.shape[0] != b.shape[0]:
                raise DimensionMismatch("bias length does not match weight rows")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("non-finite network weight")
            w.setflags(write=False)
            b.setflags(write=False)
            self.layers.append((w, b))
        if not self.layers:
            raise ValueError("network needs at least one layer")
        for (w0, _), (w1, _) in zip(self.layers, self.layers[1:]):
            if w1.shape[1] != w0.shape[0]:
                raise DimensionMismatch("layer sizes do not chain")

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    def forward(self, x) -> np.ndarray:
        h = np.asarray(x, float)
        for w, b in self.layers[:-1]:
            h = np.maximum(w @ h + b, 0.0)
        w, b = self.layers[-1]
        return w @ h + b

    def argmax(self, x) -> int:
        # np.argmax returns the first maximal index, i.e. lowest-index tie-break
        return int(np.argmax(self.forward(x)))

    def to_json(self) -> dict:
        return {"layers": [{"w": w.tolist(), "b": b.tolist()} for w, b in self.layers]}

    @classmethod
    def from_json(cls, data: dict) -> "ReluNetwork":
        return cls([(layer["w"], layer["b"]) for layer in data["layers"]])

    @classmethod
    def load(cls, path) -> "ReluNetwork":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class LinearPiece:
    cell: geo.Polytope
    F: np.ndarray          # logits = F x + g on the cell
    g: np.ndarray
    pattern: tuple         # one bit per hidden neuron, 1 = active

    def logits(self, x) -> np.ndarray:
        return self.F @ np.asarray(x, float) + self.g


def _is_bounded(p: geo.Polytope) -> bool:
    from . import lp
    for k in range(p.dim):
        for s in (1.0, -1.0):
            c = np.zeros(p.dim)
            c[k] = s
            sol = lp.solve_dense(c, p.A if p.n_halfspaces else None,
                                 p.b if p.n_halfspaces else None,
                                 bounds=[(None, None)] * p.dim, maximize=True)
            if sol.status == lp.UNBOUNDED:
                return False
    return True


def enumerate_pieces(net: ReluNetwork, domain: geo.Polytope,
                     cap: int = DEFAULT_PIECE_CAP) -> list:
    if domain.dim != net.input_dim:
        raise DimensionMismatch(f"domain dim {domain.dim} vs network input {net.input_dim}")
    if not _is_bounded(domain):
        raise DomainUnbounded("enumeration needs a bounded domain")
    e = net.input_dim
    hidden = net.layers[:-1]
    pieces: list = []
    if not geo.is_full_dim(domain):
        return pieces

    # stack entries: (cell, layer index, neuron index, Q, q, Z, z, bits)
    # Q x + q is the current layer's input, Z x + z its pre-activation.
    stack = []
    if hidden:
        w, b = hidden[0]
        stack.append((domain, 0, 0, np.eye(e), np.zeros(e), w, b, (), np.ones(w.shape[0])))
    else:
        w, b = net.layers[-1]
        pieces.append(LinearPiece(domain, w.copy(), b.copy(), ()))

    while stack:
        cell, li, ni, Q, q, Z, z, bits, mask = stack.pop()
        n_layer = Z.shape[0]
        if ni == n_layer:
            # layer finished: apply the mask and move to the next layer
            Qn = mask[:, None] * Z
            qn = mask * z
            if li + 1 < len(hidden):
                w, b = hidden[li + 1]
                stack.append((cell, li + 1, 0, Qn, qn, w @ Qn, w @ qn + b, bits,
                              np.ones(w.shape[0])))
            else:
                w, b = net.layers[-1]
                pieces.append(LinearPiece(cell, w @ Qn, w @ qn + b, bits))
                if len(pieces) > cap:
                    raise PieceBudgetExceeded(f"more than {cap} linear pieces")
            continue
        row, off = Z[ni], z[ni]
        nrm = np.linalg.norm(row)
        children = []
        if nrm < 1e-12:
            children.append((cell, off > 0))
        else:
            # inactive side: row x + off <= 0 ; active side: -(row x + off) <= 0
            for active in (False, True):
                sgn = -1.0 if active else 1.0
                sub = geo.intersect_halfspaces(cell, (sgn * row)[None, :], [-sgn * off], prune=False)
                if sub is None or not geo.is_full_dim(sub):
                    continue
                children.append((sub, active))
            if len(children) == 1:
                children = [(cell, children[0][1])]
            else:
                children = [(geo.remove_redundant(c), a) for c, a in children]
        # push in reverse so the inactive child is explored first
        for sub, active in reversed(children):
            m2 = mask.copy()
            m2[ni] = 1.0 if active else 0.0
            stack.append((sub, li, ni + 1, Q, q, Z, z, bits + (int(active),), m2))

    pieces.sort(key=lambda p: p.pattern)
    return pieces


def label_argmax(piece: LinearPiece) -> list:
    """Split a piece into sub-cells of constant argmax (lowest index wins ties)."""
    F, g = piece.F, piece.g
    k_out = F.shape[0]
    out = []
    for j in range(k_out):
        rows, offs = [], []
        feasible = True
        for k in range(k_out):
            if k == j:
                continue
            d = F[k] - F[j]
            c = g[k] - g[j]
            if np.linalg.norm(d) < 1e-12:
                # constant difference: decide now, exact ties go to the lower index
                if c > 0 or (c == 0 and k < j):
                    feasible = False
                    break
                continue
            rows.append(d)
            offs.append(-c)
        if not feasible:
            continue
        if rows:
            sub = geo.intersect_halfspaces(piece.cell, np.array(rows), np.array(offs), prune=False)
            if sub is None or not geo.is_full_dim(sub):
                continue
            sub = geo.remove_redundant(sub)
        else:
            sub = piece.cell
        out.append((sub, j))
    return out


def decision_regions(net: ReluNetwork, domain: geo.Polytope,
                     cap: int = DEFAULT_PIECE_CAP) -> list:
    """All (cell, percept) pairs for one classifier over ``domain``."""
    out = []
    for piece in enumerate_pieces(net, domain, cap):
        out.extend(label_argmax(piece))
    return out


def perception_fcp(model, cap: int = DEFAULT_PIECE_CAP) -> geo.Fcp:
    """Constant-observation partition: one region per (local state, percept) cell."""
    cache: dict = {}
    regions = []
    for li, net in enumerate(model.classifiers):
        key = id(net)
        if key not in cache:
            cache[key] = decision_regions(net, model.env_box, cap)
        for cell, per in cache[key]:
            regions.append((model.agent_state(li, per), cell))
    return geo.Fcp(tuple(regions)).canonical()
