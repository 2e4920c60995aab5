"""Command-line entry point: ``paththerm <subcommand> [options]``.

Exit codes: 0 success, 1 usage or parse error, 2 numerical failure
(truncation or solver), 3 a ``--check`` (or ``--require-simple``) assertion
failed.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import cme, pathentropy, ssa
from .errors import InsufficientDataError, NetworkError, NumericalError, PathThermError
from .network import PRESETS, group_channels, parse_network, preset, preset_defaults

# values used when neither the command line nor a config file sets a key
DEFAULTS = {
    "model": None,
    "preset": None,
    "params": {},
    "xmax": 200,
    "x0": None,
    "t_final": 100.0,
    "max_events": None,
    "window": 0.5,
    "n_windows": 10_000,
    "n_chains": 1,
    "n_trajectories": 1,
    "seed": 0,
    "mode": "direct",
    "out": None,
    "jobs": 1,
    "kind": "lumped",
    "n_steps": 4,
    "dt": 0.1,
    "compare": False,
    "check": False,
    "require_simple": False,
}
PRESET_X0 = {"driven_cycle": [1, 0, 0], "xy_pair": [5, 5]}
DB_TOL = 1e-10
TV_TOL = 0.02


class UsageError(PathThermError):
    pass


class CheckFailed(PathThermError):
    pass


def _parse_params(items):
    out = {}
    for item in items or []:
        for part in str(item).split(","):
            if not part.strip():
                continue
            if "=" not in part:
                raise UsageError(f"parameter {part!r} is not of the form key=value")
            k, v = part.split("=", 1)
            v = v.strip()
            out[k.strip()] = int(v) if v.lstrip("+-").isdigit() else float(v)
    return out


def _parse_x0(value):
    if value is None or isinstance(value, list):
        return value
    return [int(v) for v in str(value).replace(",", " ").split()]


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    cfg = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":" if ":" in line else None
        if sep is None:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split(sep, 1))
        cfg[k.replace("-", "_")] = v
    return cfg


def _coerce(key, value):
    if value is None:
        return None
    if key == "params":
        return value if isinstance(value, dict) else _parse_params([value])
    if key == "x0":
        return _parse_x0(value)
    if key in ("xmax", "n_windows", "n_chains", "n_trajectories", "seed", "jobs", "n_steps", "max_events"):
        return int(value)
    if key in ("t_final", "window", "dt"):
        return float(value)
    if key in ("compare", "check", "require_simple"):
        return value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes", "on")
    return value


def effective_config(args) -> dict:
    """CLI flags override config-file values override defaults; seed falls back to $PATHTHERM_SEED."""
    cfg = dict(DEFAULTS)
    env_seed = os.environ.get("PATHTHERM_SEED")
    if env_seed is not None:
        cfg["seed"] = int(env_seed)
    if args.config:
        for k, v in read_config(args.config).items():
            if k not in DEFAULTS:
                raise UsageError(f"unknown config key {k!r}")
            cfg[k] = _coerce(k, v)
    for k in DEFAULTS:
        v = getattr(args, k, None)
        if k == "params":
            if v:
                cfg["params"] = {**cfg["params"], **_parse_params(v)}
        elif v is not None and v is not False:
            cfg[k] = _coerce(k, v)
    if not cfg["model"] and not cfg["preset"]:
        raise UsageError("give --model <file> or --preset <name>")
    if cfg["model"] and cfg["preset"]:
        raise UsageError("--model and --preset are mutually exclusive")
    if cfg["preset"]:
        cfg["params"] = {**preset_defaults(cfg["preset"]), **cfg["params"]}
    for k in ("n_windows", "n_chains", "n_trajectories", "jobs"):
        if cfg[k] < 1:
            raise UsageError(f"{k} must be >= 1")
    if cfg["window"] <= 0 or cfg["t_final"] <= 0:
        raise UsageError("window and t_final must be positive")
    if cfg["window"] > cfg["t_final"]:
        raise UsageError("window must not exceed t_final")
    return cfg


def load_network(cfg):
    if cfg["model"]:
        path = Path(cfg["model"])
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read model file: {exc}") from None
        return parse_network(text, source=str(path))
    return preset(cfg["preset"], cfg["params"])


def make_box(network, cfg):
    xmax = cfg["xmax"]
    if network.N == 1:
        return cme.StateBox([0], [xmax])
    x0 = cfg["x0"] or PRESET_X0.get(cfg["preset"])
    if x0 is None:
        raise UsageError("multi-species models need --x0 to fix the reachable state set")
    return cme.StateBox.reachable(network, x0, [xmax] * network.N)


def _out_dir(cfg):
    if cfg["out"] is None:
        return None
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "run.json", "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def _emit(rep, out, name):
    # the histogram goes to the files only
    print(json.dumps({k: v for k, v in rep.items() if k != "histogram"}, indent=2))
    if out is not None:
        with open(out / name, "w") as fh:
            json.dump(rep, fh, indent=2)
            fh.write("\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_inspect(cfg) -> int:
    net = load_network(cfg)
    grouping = group_channels(net)
    out = _out_dir(cfg)
    groups = []
    for nu, members in grouping.groups.items():
        groups.append({"jump": list(nu), "channels": members, "multigraph": len(members) >= 2})
    rep = {
        "N": net.N,
        "R": net.R,
        "species": list(net.dynamic_names),
        "groups": groups,
        "multigraph": grouping.multigraph,
        "verdict": "multigraph" if grouping.multigraph else "simple",
    }
    _emit(rep, out, "inspect.json")
    if cfg["require_simple"] and grouping.multigraph:
        raise CheckFailed("multigraph groups present: " + ", ".join(
            str(g["channels"]) for g in groups if g["multigraph"]))
    return 0


def _solve(cfg, boundary_tol=1e-10):
    net = load_network(cfg)
    box = make_box(net, cfg)
    gen = cme.build_generator(net, group_channels(net), box)
    return net, gen, cme.stationary(gen, boundary_tol=boundary_tol)


def cmd_stationary(cfg) -> int:
    net, gen, dist = _solve(cfg)
    out = _out_dir(cfg)
    residual = cme.detailed_balance_residual(gen, dist)
    rep = {
        "states": gen.size,
        "boundary_mass": gen.boundary_mass(dist),
        "detailed_balance_residual": residual,
        "verdict": "detailed balance holds" if residual <= DB_TOL else "detailed balance violated",
        "mean": dist.mean().tolist(),
        "gibbs_shannon_entropy": cme.gibbs_shannon_entropy(dist),
    }
    if net.fully_paired and net.R:
        rep["mean_entropy_production_rate"] = cme.mean_entropy_production_rate(gen, dist)
    if out is not None:
        dist.to_csv(out / "distribution.csv")
    _emit(rep, out, "stationary.json")
    if cfg["check"] and residual > DB_TOL:
        raise CheckFailed(f"detailed balance residual {residual:.3e} > {DB_TOL:g}")
    return 0


def _simulate_one(args):
    net, x0, t_final, seed, stream, mode, max_events = args
    return ssa.simulate(net, x0, t_final, ssa.RngStream(seed, stream), mode=mode, max_events=max_events)


def _map(fn, jobs, items):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def occupation(trajectory, box) -> np.ndarray:
    """Time-weighted occupation of the box states (mass outside the box is dropped)."""
    idx = box.indices(trajectory.states)
    keep = idx >= 0
    occ = np.bincount(idx[keep], weights=trajectory.waits[keep], minlength=box.size)
    return occ


def cmd_simulate(cfg) -> int:
    net = load_network(cfg)
    box = make_box(net, cfg)
    x0 = cfg["x0"] or PRESET_X0.get(cfg["preset"])
    if x0 is None:
        x0 = [int(cfg["xmax"] // 10)] * net.N
    t_final = math.inf if cfg["max_events"] else cfg["t_final"]
    out = _out_dir(cfg)
    items = [(net, x0, t_final, cfg["seed"], s, cfg["mode"], cfg["max_events"]) for s in range(cfg["n_trajectories"])]
    trajs = _map(_simulate_one, cfg["jobs"], items)
    occ = sum(occupation(t, box) for t in trajs)
    total = float(occ.sum())
    rep = {
        "n_trajectories": len(trajs),
        "events": [t.n_events for t in trajs],
        "t_final": [t.t_final for t in trajs],
        "absorbed": [bool(t.absorbed) for t in trajs],
    }
    if out is not None:
        with open(out / "trajectory.jsonl", "w") as fh:
            ssa.write_jsonl(trajs[0], fh, cfg["seed"], 0)
        with open(out / "histogram.csv", "w") as fh:
            fh.write(",".join([f"x{i + 1}" for i in range(net.N)] + ["probability"]) + "\n")
            for x, p in zip(box.states.tolist(), (occ / total if total > 0 else occ).tolist()):
                fh.write(",".join(str(v) for v in x) + f",{p!r}\n")
    if cfg["compare"]:
        gen = cme.build_generator(net, group_channels(net), box)
        dist = cme.stationary(gen)
        rep["total_variation"] = cme.total_variation(occ / total, dist)
    _emit(rep, out, "simulate.json")
    if cfg["check"] and cfg["compare"] and rep["total_variation"] >= TV_TOL:
        raise CheckFailed(f"total variation {rep['total_variation']:.4f} >= {TV_TOL}")
    return 0


def _chain_samples(args):
    net, gen, dist, kind, tau, n, seed, stream, mode = args
    values, _, burn = pathentropy.stationary_window_samples(net, gen, dist, kind, tau, n, ssa.RngStream(seed, stream), mode)
    return values


def cmd_ft(cfg) -> int:
    net, gen, dist = _solve(cfg)
    out = _out_dir(cfg)
    kind, tau = cfg["kind"], cfg["window"]
    if kind not in ("lumped", "channel"):
        raise UsageError(f"--kind must be lumped or channel, got {kind!r}")
    chains = cfg["n_chains"]
    per = [cfg["n_windows"] // chains + (1 if i < cfg["n_windows"] % chains else 0) for i in range(chains)]
    items = [(net, gen, dist, kind, tau, n, cfg["seed"], i, cfg["mode"]) for i, n in enumerate(per) if n]
    values = np.concatenate(_map(_chain_samples, cfg["jobs"], items))
    sigma = cme.mean_entropy_production_rate(gen, dist) if net.fully_paired else None
    rate = values / tau
    extra = {
        "window": tau,
        "mean_rate": float(rate.mean()),
        "sem_rate": float(rate.std(ddof=1) / math.sqrt(rate.size)) if rate.size > 1 else None,
        "mean_entropy_production_rate": sigma,
    }
    if sigma is not None and extra["sem_rate"]:
        extra["z_score"] = (extra["mean_rate"] - sigma) / extra["sem_rate"] if extra["sem_rate"] > 0 else None
    ft = sym = None
    if np.all(values == 0) or np.abs(values).max() <= 1e-12:
        extra["note"] = "degenerate: every window has zeta = 0 (stationary lumped Z vanishes identically)"
        sym = pathentropy.SymmetryResult(0.0, 1.0, int(values.size))
    else:
        try:
            ft = pathentropy.ft_test(values, min_samples=1)
        except InsufficientDataError as exc:
            extra["note"] = f"fluctuation-theorem fit unavailable: {exc}"
        sym = pathentropy.symmetry_test(values, min_samples=1)
    hist = pathentropy.histogram(values, symmetric=True) if np.ptp(values) > 0 else pathentropy.histogram(values)
    rep = pathentropy.report(kind, values, ft, sym, hist, **extra)
    if ft is not None:
        rep["ft_holds"] = ft.holds
    rep["symmetry_rejected"] = sym.rejected
    if out is not None:
        hist.to_csv(out / "zeta_histogram.csv")
    _emit(rep, out, "ft.json")
    if cfg["check"]:
        if kind == "lumped" and ft is not None and not ft.holds:
            raise CheckFailed(f"FT slope CI {ft.slope_ci} does not cover 1")
        if kind == "channel" and sym.rejected:
            raise CheckFailed(f"symmetry rejected (p = {sym.p_value:.3g})")
    return 0


def cmd_reversibility(cfg) -> int:
    net = load_network(cfg)
    box = make_box(net, cfg)
    if box.size > 10_000:
        raise UsageError(f"box has {box.size} states; reversibility enumeration allows at most 10^4")
    n = cfg["n_steps"]
    if not 0 <= n <= 6:
        raise UsageError("--n-steps must be between 0 and 6")
    gen = cme.build_generator(net, group_channels(net), box)
    dist = cme.stationary(gen, boundary_tol=None)
    out = _out_dir(cfg)
    gap, count = pathentropy.max_reversibility_gap(gen, dist, n, cfg["dt"])
    rep = {"states": gen.size, "n_steps": n, "dt": cfg["dt"], "paths": count, "max_gap": gap,
           "verdict": "reversible" if gap <= DB_TOL else "not reversible"}
    _emit(rep, out, "reversibility.json")
    if cfg["check"] and gap > DB_TOL:
        raise CheckFailed(f"max forward/reverse gap {gap:.3e} > {DB_TOL:g}")
    return 0


COMMANDS = {
    "inspect": cmd_inspect,
    "stationary": cmd_stationary,
    "simulate": cmd_simulate,
    "ft": cmd_ft,
    "reversibility": cmd_reversibility,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="paththerm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        src = p.add_mutually_exclusive_group()
        src.add_argument("--model", help="network description file")
        src.add_argument("--preset", choices=PRESETS)
        p.add_argument("--param", dest="params", action="append", metavar="K=V", help="preset parameter")
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--xmax", type=int, help="upper bound of the state box per species")
        p.add_argument("--x0", help="initial state, comma separated")
        p.add_argument("--t-final", dest="t_final", type=float)
        p.add_argument("--max-events", dest="max_events", type=int)
        p.add_argument("--window", type=float, help="window length tau")
        p.add_argument("--n-windows", dest="n_windows", type=int)
        p.add_argument("--n-chains", dest="n_chains", type=int, help="independent streams for window sampling")
        p.add_argument("--n-trajectories", dest="n_trajectories", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--mode", choices=("direct", "two_stage"))
        p.add_argument("--out", help="output directory")
        p.add_argument("--jobs", type=int, help="worker processes")
        p.add_argument("--kind", choices=("lumped", "channel"))
        p.add_argument("--n-steps", dest="n_steps", type=int)
        p.add_argument("--dt", type=float)
        p.add_argument("--compare", action="store_true", help="compare against the CME stationary distribution")
        p.add_argument("--check", action="store_true", help="exit 3 when the command's claim fails")
        p.add_argument("--require-simple", dest="require_simple", action="store_true")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = effective_config(args)
        return COMMANDS[args.command](cfg)
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (UsageError, NetworkError, PathThermError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
