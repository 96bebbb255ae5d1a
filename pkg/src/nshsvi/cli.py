"""Command-line entry point.

Subcommands: validate, preimage, solve, simulate, eval.  Every JSON
artifact carries a ``manifest`` block (command, inputs with hashes, config,
version, seed, wall time).  Exit codes: 0 success, 2 invalid input,
3 limit reached, 4 numerical failure.  Errors go to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from . import beliefs as bel
from . import errors as err
from . import geometry as geo
from . import hsvi, lower, lp, strategy, upper
from . import model as mdl

EXIT_OK, EXIT_INVALID, EXIT_LIMIT, EXIT_NUMERIC = 0, 2, 3, 4

_INVALID = (err.ModelError, err.IncompatibleState, err.DimensionMismatch, err.DomainUnbounded,
            err.AgentStateMismatch, err.NoPointsForAgentState, err.NoRegion, ValueError,
            KeyError, OSError, json.JSONDecodeError)
_LIMIT = (err.LimitReached, err.PieceBudgetExceeded)


@dataclass
class RunManifest:
    command: str
    inputs: dict
    config: dict
    version: str = __version__
    seed: int = 0
    wall_time: float = 0.0
    platform: dict = field(default_factory=lambda: {
        "python": platform.python_version(), "numpy": np.__version__})


def _digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _inputs(**paths) -> dict:
    return {k: {"path": p, "sha256": _digest(p)} for k, p in paths.items() if p}


def _write_json(path: str, obj) -> None:
    # json writes floats with repr, the shortest string that round-trips exactly
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, allow_nan=False)
        fh.write("\n")


def _emit(obj) -> None:
    print(json.dumps(obj, allow_nan=False))


# ---------------------------------------------------------------- bounds files

def bounds_to_json(model, result: hsvi.SolveResult, b0) -> dict:
    return {
        "status": result.status,
        "lb": result.lb,
        "ub": result.ub,
        "iterations": result.iterations,
        "stats": result.stats,
        "belief": b0.to_json(model),
        "gamma": {"lower": result.gamma.lower,
                  "alphas": [lower.alpha_to_json(a) for a in result.gamma.alphas]},
        "upsilon": result.upsilon.to_json(model),
    }


def bounds_from_json(model, data: dict):
    """(GammaSet, UpsilonSet) from a bounds artifact."""
    g = data["gamma"]
    alphas = []
    for items in g["alphas"]:
        fcp, values = geo.fcp_from_json(items, model.env_dim)
        if values is None:
            raise err.ModelError("alpha function without values")
        alphas.append(lower.AlphaFunction(fcp, tuple(values), "loaded"))
    gamma = lower.GammaSet(alphas, g["lower"])
    ups = upper.UpsilonSet.from_json(model, data["upsilon"])
    return gamma, ups


def _load_json(path: str):
    with open(path) as fh:
        return json.load(fh)


def _belief(model, path: Optional[str]):
    if path:
        return bel.belief_from_json(model, _load_json(path))
    if model.initial_belief is None:
        raise ValueError("model has no initial_belief; pass --belief")
    return bel.belief_from_json(model, model.initial_belief)


def parse_seeds(text: str) -> list:
    """'0..199' (inclusive), '1,4,9' or a single integer."""
    text = text.strip()
    if ".." in text:
        a, b = text.split("..", 1)
        lo, hi = int(a), int(b)
        if hi < lo:
            raise ValueError(f"empty seed range {text!r}")
        return list(range(lo, hi + 1))
    return [int(t) for t in text.split(",") if t.strip()]


# ---------------------------------------------------------------- commands

def cmd_validate(args) -> int:
    model = mdl.load(args.model)
    issues = mdl.validate(model, n_samples=args.samples, seed=args.seed)
    _emit({"model": args.model, "valid": not issues, "issues": issues})
    return EXIT_INVALID if issues else EXIT_OK


def cmd_preimage(args, manifest: RunManifest) -> int:
    model = mdl.load(args.model)
    from . import relu
    fcp = relu.perception_fcp(model, cap=args.cap)
    regions = []
    for s1, cell in fcp.regions:
        loc, per = model.split_state(s1)
        regions.append({"agent_state": int(s1), "local": model.locals[loc],
                        "percept": model.percepts[per], "halfspaces": cell.halfspaces(),
                        "volume": geo.volume(cell)})
    manifest.config = {"cap": args.cap}
    manifest.wall_time = time.perf_counter() - args._t0
    _write_json(args.out, {"env_dim": model.env_dim, "regions": regions,
                           "manifest": asdict(manifest)})
    _emit({"out": args.out, "regions": len(regions)})
    return EXIT_OK


def cmd_solve(args, manifest: RunManifest) -> int:
    model = mdl.load(args.model)
    b0 = _belief(model, args.belief)
    cfg = hsvi.HsviConfig(epsilon=args.epsilon, epsilon_bar=args.epsilon_bar,
                          max_seconds=args.timeout, max_iterations=args.max_iterations,
                          max_depth=args.max_depth, seed=args.seed,
                          particle_cap=args.particle_cap or None, init_mode=args.init_mode)
    res = hsvi.solve(model, b0, cfg, raise_on_limit=False)
    manifest.config = {k: v for k, v in asdict(cfg).items()}
    manifest.config["backend"] = args.backend
    manifest.wall_time = time.perf_counter() - args._t0
    out = bounds_to_json(model, res, b0)
    out["manifest"] = asdict(manifest)
    _write_json(args.out, out)
    if args.trace:
        with open(args.trace, "w") as fh:
            fh.write(hsvi.trace_to_csv(res.trace))
        _write_json(args.trace + ".manifest.json", asdict(manifest))
    _emit({"status": res.status, "lb": res.lb, "ub": res.ub, "iterations": res.iterations,
           "gamma": len(res.gamma), "upsilon": len(res.upsilon)})
    return EXIT_LIMIT if res.status != "converged" else EXIT_OK


def cmd_eval(args) -> int:
    model = mdl.load(args.model)
    gamma, ups = bounds_from_json(model, _load_json(args.bounds))
    b = _belief(model, args.belief)
    lb = lower.evaluate(gamma, b)
    ub = upper.evaluate_ub(ups, b)
    _emit({"lb": lb, "ub": ub, "gap": ub - lb})
    return EXIT_OK


def cmd_simulate(args, manifest: RunManifest) -> int:
    model = mdl.load(args.model)
    gamma, ups = bounds_from_json(model, _load_json(args.bounds))
    b0 = _belief(model, args.belief)
    seeds = parse_seeds(args.seeds) if args.seeds else [args.seed]
    cap = args.particle_cap or None
    p1 = strategy.Ag1Policy(model, gamma, b0, cap)
    p2 = strategy.Ag2Policy(model, ups, b0, gamma, mode=args.ag2_mode, particle_cap=cap)
    traces = []
    for s in seeds:
        tr = strategy.simulate(model, p1, p2, args.horizon, s)
        item = tr.to_json(model)
        if args.no_beliefs:
            for st in item["steps"]:
                st.pop("belief")
        traces.append(item)
    rets = np.array([t["return"] for t in traces])
    summary = {"rollouts": len(traces), "mean_return": float(rets.mean()),
               "stderr": float(rets.std(ddof=1) / np.sqrt(len(rets))) if len(rets) > 1 else 0.0}
    manifest.config = {"horizon": args.horizon, "seeds": seeds, "ag2_mode": args.ag2_mode,
                       "particle_cap": cap}
    manifest.wall_time = time.perf_counter() - args._t0
    _write_json(args.out, {"summary": summary, "traces": traces, "manifest": asdict(manifest)})
    _emit(summary)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    common.add_argument("--threads", type=int, default=1,
                        help="accepted for compatibility; runs are single threaded")
    common.add_argument("--lp-dump", metavar="DIR", help="write every LP instance to DIR")
    common.add_argument("--backend", choices=("highs", "simplex"), default="highs")
    common.add_argument("--log-level", default="WARNING")

    p = argparse.ArgumentParser(prog="nshsvi", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", parents=[common], help="check a model file")
    s.add_argument("model")
    s.add_argument("--samples", type=int, default=1000)

    s = sub.add_parser("preimage", parents=[common], help="perception partition of a model")
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--cap", type=int, default=10**6, help="maximum linear pieces per network")

    s = sub.add_parser("solve", parents=[common], help="run the bound search")
    s.add_argument("model")
    s.add_argument("--belief")
    s.add_argument("--epsilon", type=float, default=0.1)
    s.add_argument("--epsilon-bar", type=float)
    s.add_argument("--timeout", type=float, default=7200.0, help="seconds")
    s.add_argument("--max-iterations", type=int)
    s.add_argument("--max-depth", type=int)
    s.add_argument("--particle-cap", type=int, default=bel.DEFAULT_CAP, help="0 disables")
    s.add_argument("--init-mode", choices=(upper.MAX_ABS_REWARD, upper.MAX_REWARD),
                   default=upper.MAX_ABS_REWARD)
    s.add_argument("--trace", help="CSV of the bounds per iteration")
    s.add_argument("--out", required=True)

    s = sub.add_parser("simulate", parents=[common], help="roll out the synthesised strategies")
    s.add_argument("model")
    s.add_argument("--bounds", required=True)
    s.add_argument("--belief")
    s.add_argument("--horizon", type=int, default=20)
    s.add_argument("--seeds", help="'0..199', '1,2,3' or one integer (default: --seed)")
    s.add_argument("--ag2-mode", choices=("ag1", "own"), default="ag1")
    s.add_argument("--particle-cap", type=int, default=bel.DEFAULT_CAP, help="0 disables")
    s.add_argument("--no-beliefs", action="store_true", help="omit belief snapshots")
    s.add_argument("--out", required=True)

    s = sub.add_parser("eval", parents=[common], help="print both bounds at a belief")
    s.add_argument("model")
    s.add_argument("--bounds", required=True)
    s.add_argument("--belief")
    return p


def _error(code: int, exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc),
                                 "exit_code": code}) + "\n")
    return code


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args._t0 = time.perf_counter()
    lp.set_default_backend(args.backend)
    lp.set_dump_dir(args.lp_dump)
    try:
        paths = {k: getattr(args, k, None) for k in ("model", "belief", "bounds")}
        manifest = RunManifest(args.command, _inputs(**paths), {}, seed=args.seed)
        if args.command == "validate":
            return cmd_validate(args)
        if args.command == "eval":
            return cmd_eval(args)
        handler = {"preimage": cmd_preimage, "solve": cmd_solve, "simulate": cmd_simulate}
        return handler[args.command](args, manifest)
    except _LIMIT as exc:
        return _error(EXIT_LIMIT, exc)
    except _INVALID as exc:
        return _error(EXIT_INVALID, exc)
    except Exception as exc:  # numerical failures and anything unforeseen
        return _error(EXIT_NUMERIC, exc)
    finally:
        lp.set_default_backend("highs")
        lp.set_dump_dir(None)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
