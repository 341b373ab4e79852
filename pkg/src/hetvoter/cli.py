"""Command-line front end.

Every run reads an optional YAML config, applies ``--set`` overrides and the
common flags (precedence: flag > file > default), validates the whole
configuration, computes, and only then writes its outputs plus a
``manifest.json`` into ``--out``. A manifest is itself a valid ``--config``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import copy
import csv
import datetime as _dt
import math
import re
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import yaml

from . import __version__
from ._accel import BACKEND
from .errors import DegenerateEquilibria, NumericalError, ValidationError
from .model import AggregateState, Environment, ModelParams, default_start, sample_environment
from .outputs import Staging, dump_json
from .rng import SDE, derive_seed

__all__ = ["main", "DEFAULTS", "resolve_config"]

COMMANDS = ("ode", "simulate", "qpot", "fpt", "fluct", "scaling")
N_SWEEP = list(range(40, 201, 20))

DEFAULTS = {
    "model": {"N": 1000, "rho": 0.5, "q": 0.5},
    "seed": 0,
    "out": "out",
    "threads": 1,
    "ode": {"x0": [0.1, 0.1], "horizon": 50.0, "step": 0.01},
    "simulate": {
        "mode": "path",            # path | absorption | exit
        "environment": "sampled",  # sampled | pinned
        "horizon": 10.0,           # path mode
        "dt": None,                # optional output grid for path mode
        "replicas": 100,
        "shared_env": True,
        "cap": 1e6,
        "radius": 0.1,             # exit disk around z
        "start": None,             # [k_plus, k_minus]; default z-nearest
        "max_censored_fraction": 0.0,
    },
    "qpot": {
        "target": None,            # [m+, m-]; None scans the circle below
        "radius": 0.1,
        "points": 64,
        "M": 200,
        "tol": 1e-5,
        "max_iter": 1500,
        "restarts": 3,
    },
    "fpt": {
        "mode": "exit",
        "environment": "pinned",
        "N_list": N_SWEEP,
        "radius": 0.1,
        "nominal_q": False,
    },
    "fluct": {
        "H": "pinned",             # pinned | sampled | a number
        "x0": [0.0, 0.0],
        "horizon": 1100.0,
        "step": 0.01,
        "forcing": 0.25,
        "empirical": False,        # also simulate the N-site chain
        "burn_in": 50.0,
        "window": 500.0,
        "dt": 0.1,
    },
    "scaling": {
        "N_list": N_SWEEP,
        "radius": 0.1,
        "boundary": True,
        "points": 64,
        "M": 200,
    },
}


# --------------------------------------------------------------------- config

class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e-5`` as a float (YAML 1.1 needs a dot)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^[-+]?(?:[0-9][0-9_]*\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                |[-+]?[0-9][0-9_]*[eE][-+]?[0-9]+
                |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                |[-+]?\.(?:inf|Inf|INF)
                |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."),
)


def _yaml(text):
    return yaml.load(text, Loader=_Loader)


def _merge(base: dict, upd: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in upd.items():
        key = f"{where}{k}"
        if k not in base:
            raise ValidationError(f"unknown config key {key!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ValidationError(f"config key {key!r} must be a mapping")
            out[k] = _merge(base[k], v, key + ".")
        else:
            out[k] = v
    return out


def _nest(dotted: str, value) -> dict:
    head, *rest = dotted.split(".")
    return {head: _nest(".".join(rest), value) if rest else value}


def load_file(path) -> dict:
    try:
        with open(path) as fh:
            data = _yaml(fh)
    except OSError as e:
        raise ValidationError(f"cannot read config {path}: {e.strerror}") from None
    except yaml.YAMLError as e:
        raise ValidationError(f"config {path} is not valid YAML: {e}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValidationError(f"config {path} must be a mapping")
    if "config" in data and "outputs" in data:  # a manifest from an earlier run
        data = data["config"]
    return data


def resolve_config(file_cfg: dict | None = None, overrides: list[str] = (),
                   seed=None, out=None, threads=None) -> dict:
    cfg = _merge(DEFAULTS, file_cfg or {})
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        cfg = _merge(cfg, _nest(key.strip(), _yaml(raw)))
    if seed is not None:
        cfg["seed"] = seed
    if out is not None:
        cfg["out"] = out
    if threads is not None:
        cfg["threads"] = threads
    return cfg


def _num(cfg, key, section, lo=None, hi=None, integer=False, lo_open=False):
    v = cfg[key]
    name = f"{section}.{key}" if section else key
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValidationError(f"{name} must be a number, got {v!r}")
    if integer and int(v) != v:
        raise ValidationError(f"{name} must be an integer, got {v!r}")
    if not math.isfinite(v):
        raise ValidationError(f"{name} must be finite")
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ValidationError(f"{name} must be {'>' if lo_open else '>='} {lo}, got {v!r}")
    if hi is not None and v > hi:
        raise ValidationError(f"{name} must be <= {hi}, got {v!r}")
    return int(v) if integer else float(v)


def _pair(v, name):
    if not (isinstance(v, (list, tuple)) and len(v) == 2):
        raise ValidationError(f"{name} must be a pair [a, b], got {v!r}")
    return v


def _choice(v, name, options):
    if v not in options:
        raise ValidationError(f"{name} must be one of {', '.join(options)}; got {v!r}")
    return v


def _bool(v, name):
    if not isinstance(v, bool):
        raise ValidationError(f"{name} must be true or false, got {v!r}")
    return v


def _n_list(v, name):
    if not isinstance(v, (list, tuple)) or not all(
            isinstance(n, int) and not isinstance(n, bool) and n >= 2 for n in v):
        raise ValidationError(f"{name} must be a list of integers >= 2")
    if len(v) < 4:
        raise ValidationError(f"{name} needs at least 4 values for the scaling fit, got {len(v)}")
    if any(b <= a for a, b in zip(v, v[1:])):
        raise ValidationError(f"{name} must be strictly increasing")
    return list(v)


def model_params(cfg) -> ModelParams:
    m = cfg["model"]
    seed = cfg["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        raise ValidationError(f"seed must be an integer in [0, 2^64), got {seed!r}")
    try:
        return ModelParams(N=m["N"], rho=m["rho"], q=m["q"], seed=seed)
    except ValidationError as e:
        raise ValidationError(f"model: {e}") from None


# ------------------------------------------------------------------- commands

def _environment(kind, params):
    return Environment.pinned(params) if kind == "pinned" else sample_environment(params)


def _start(given, params, env, name):
    if given is None:
        return default_start(params, env)
    kp, km = _pair(given, name)
    try:
        return AggregateState(int(kp), int(km)).check(env)
    except (TypeError, ValueError) as e:
        raise ValidationError(f"{name}: {e}") from None


def run_ode(cfg, st):
    from .meanfield import equilibria, integrate_ode

    p = model_params(cfg)
    c = cfg["ode"]
    x0 = [float(v) for v in _pair(c["x0"], "ode.x0")]
    horizon = _num(c, "horizon", "ode", lo=0, lo_open=True)
    step = _num(c, "step", "ode", lo=0, lo_open=True)
    traj = integrate_ode(x0, p, horizon, step)
    try:
        eq = {"degenerate": False, "equilibria": [e.as_dict() for e in equilibria(p)]}
    except DegenerateEquilibria as e:
        eq = {"degenerate": True, "reason": str(e), "equilibria": []}
    traj.to_csv(st.path("trajectory.csv"))
    dump_json(eq, st.path("equilibria.json"))
    return 0


def run_simulate(cfg, st):
    from .meanfield import is_admissible
    from .model import interior_equilibrium
    from .simulator import ExitDisk, batch, simulate

    p = model_params(cfg)
    c = cfg["simulate"]
    mode = _choice(c["mode"], "simulate.mode", ("path", "absorption", "exit"))
    kind = _choice(c["environment"], "simulate.environment", ("sampled", "pinned"))
    threads = _num(cfg, "threads", "", lo=1, integer=True)
    replicas = _num(c, "replicas", "simulate", lo=1, integer=True)
    cap = _num(c, "cap", "simulate", lo=0, lo_open=True)
    shared = _bool(c["shared_env"], "simulate.shared_env")
    limit = _num(c, "max_censored_fraction", "simulate", lo=0, hi=1)
    radius = _num(c, "radius", "simulate", lo=0, lo_open=True)
    env = _environment(kind, p)
    if mode == "path":
        horizon = _num(c, "horizon", "simulate", lo=0, lo_open=True)
        dt = None if c["dt"] is None else _num(c, "dt", "simulate", lo=0, lo_open=True)
        x0 = _start(c["start"], p, env, "simulate.start")
        path = simulate(p, env, x0, horizon)
        path.to_csv(st.path("path.csv"), dt=dt)
        dump_json({
            "n_plus": env.n_plus, "q_N": env.q_N, "start": [x0.k_plus, x0.k_minus],
            "end_time": path.end_time, "absorbed": bool(path.absorbed),
            "absorption_time": path.absorption_time, "events": int(len(path.times) - 1),
        }, st.path("path.json"))
        return 0
    disk = None
    if mode == "exit":
        if not is_admissible(p) or p.rho >= 1:
            raise ValidationError("exit mode needs an interior equilibrium (rho < (1 - q) / q)")
        disk = ExitDisk(interior_equilibrium(p.rho, p.q), radius)
    x0 = None if c["start"] is None else _start(c["start"], p, env, "simulate.start")
    res = batch(p, replicas, mode, shared, cap, x0, disk, env if shared else None, threads)
    with open(st.path("times.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replica", "seed", "time", "censored"])
        for r, (s, t, cen) in enumerate(zip(res.seeds, res.times, res.censored)):
            w.writerow([r, int(s), repr(float(t)), int(cen)])
    dump_json(res.as_dict(), st.path("batch.json"))
    if res.n_censored > limit * res.replica_count:
        return _fail(f"{res.n_censored} of {res.replica_count} replicas censored at cap {cap}")
    return 0


def _qpot_options(c, seed):
    from .ldp import QPotOptions

    return QPotOptions(
        M=_num(c, "M", "qpot", lo=2, integer=True),
        tol=_num(c, "tol", "qpot", lo=0, lo_open=True),
        max_iter=_num(c, "max_iter", "qpot", lo=1, integer=True),
        restarts=_num(c, "restarts", "qpot", lo=0, integer=True),
        seed=seed,
    )


def run_qpot(cfg, st):
    from .ldp import boundary_min, quasi_potential, stable_point

    p = model_params(cfg)
    c = cfg["qpot"]
    opts = _qpot_options(c, p.seed)
    threads = _num(cfg, "threads", "", lo=1, integer=True)
    if c["target"] is not None:
        target = [float(v) for v in _pair(c["target"], "qpot.target")]
        res = quasi_potential(target, p, opts)
        dump_json(res.as_dict(), st.path("qpot.json"))
        res.path.to_csv(st.path("path.csv"))
        return 0 if res.converged else _fail(f"optimizer did not converge (gradient {res.gradient_norm:.3g})")
    radius = _num(c, "radius", "qpot", lo=0, lo_open=True)
    n = _num(c, "points", "qpot", lo=1, integer=True)
    z = stable_point(p)
    b = boundary_min(z, radius, p, opts, n=n, threads=threads)
    b.to_csv(st.path("boundary.csv"))
    k = int(np.argmin(b.values))
    dump_json({
        "center": [float(v) for v in z], "radius": radius, "points": n,
        "V_boundary": b.value, "argmin": [float(v) for v in b.argmin],
        "all_converged": b.all_converged,
        "results": [r.as_dict() for r in b.results],
    }, st.path("boundary.json"))
    b.results[k].path.to_csv(st.path("path.csv"))
    bad = sum(not r.converged for r in b.results)
    return 0 if bad == 0 else _fail(f"{bad} of {n} boundary points did not converge")


def _sweep(p, N_list, mode, radius, kind, nominal_q, threads):
    from .ldp import stable_point
    from .oracle import FptProblem, mean_exit_time_exact
    from .simulator import ExitDisk

    def one(N):
        q = p.replace(N=N)
        env = _environment(kind, q)
        start = default_start(q, env)
        if mode == "absorption":
            return mean_exit_time_exact(FptProblem(q, env, start, None, nominal_q))
        disk = ExitDisk(tuple(stable_point(q)), radius)
        return mean_exit_time_exact(FptProblem(q, env, start, disk, nominal_q))

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, N_list))


def _fit_dict(fit):
    return {"slope": fit.slope, "intercept": fit.intercept, "r_squared": fit.r_squared,
            "residuals": [float(r) for r in fit.residuals]}


def run_fpt(cfg, st):
    from .oracle import scaling_fit

    p = model_params(cfg)
    c = cfg["fpt"]
    mode = _choice(c["mode"], "fpt.mode", ("absorption", "exit"))
    kind = _choice(c["environment"], "fpt.environment", ("sampled", "pinned"))
    N_list = _n_list(c["N_list"], "fpt.N_list")
    radius = _num(c, "radius", "fpt", lo=0, lo_open=True)
    nominal = _bool(c["nominal_q"], "fpt.nominal_q")
    threads = _num(cfg, "threads", "", lo=1, integer=True)
    times = _sweep(p, N_list, mode, radius, kind, nominal, threads)
    with open(st.path("fpt.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "mean_time"])
        for N, t in zip(N_list, times):
            w.writerow([N, repr(float(t))])
    dump_json({"mode": mode, "N": N_list, "mean_time": [float(t) for t in times],
               "fit": _fit_dict(scaling_fit(N_list, times))}, st.path("fpt.json"))
    return 0


def run_fluct(cfg, st):
    from .fluctuations import (FluctuationParams, empirical_fluctuations, integrate_sde,
                               moments_dict, quenched_H)
    from .simulator import simulate

    p = model_params(cfg)
    c = cfg["fluct"]
    if p.q != 0.5:
        raise ValidationError("fluct needs model.q = 0.5")
    if not 0 < p.rho < 1:
        raise ValidationError("fluct needs 0 < model.rho < 1")
    H_src = c["H"]
    if isinstance(H_src, str):
        env = _environment(_choice(H_src, "fluct.H", ("pinned", "sampled")), p)
        H = quenched_H(env, p)
    else:
        H = _num(c, "H", "fluct")
        env = None
    fp = FluctuationParams(p.rho, H, _num(c, "forcing", "fluct"))
    x0 = [float(v) for v in _pair(c["x0"], "fluct.x0")]
    horizon = _num(c, "horizon", "fluct", lo=0, lo_open=True)
    step = _num(c, "step", "fluct", lo=0, lo_open=True)
    empirical = _bool(c["empirical"], "fluct.empirical")
    if empirical:
        if env is None:
            raise ValidationError("fluct.empirical needs H from an environment (pinned or sampled)")
        burn = _num(c, "burn_in", "fluct", lo=0)
        window = _num(c, "window", "fluct", lo=0, lo_open=True)
        dt = _num(c, "dt", "fluct", lo=0, lo_open=True)
    series = integrate_sde(x0, fp, horizon, step, derive_seed(p.seed, SDE))
    series.to_csv(st.path("sde.csv"))
    dump_json(moments_dict(fp), st.path("moments.json"))
    if empirical:
        path = simulate(p, env, default_start(p, env), burn + window)
        emp = empirical_fluctuations(path, p, env, dt, burn, burn + window)
        emp.to_csv(st.path("empirical.csv"))
        v = emp.values
        dump_json({"H": emp.H, "mean": v.mean(axis=0).tolist(),
                   "cov": np.cov(v.T, ddof=1).tolist(), "samples": int(len(v))},
                  st.path("empirical.json"))
    return 0


def run_scaling(cfg, st):
    from .ldp import QPotOptions, boundary_min, stable_point
    from .oracle import scaling_fit

    p = model_params(cfg)
    c = cfg["scaling"]
    N_list = _n_list(c["N_list"], "scaling.N_list")
    radius = _num(c, "radius", "scaling", lo=0, lo_open=True)
    boundary = _bool(c["boundary"], "scaling.boundary")
    n = _num(c, "points", "scaling", lo=1, integer=True)
    M = _num(c, "M", "scaling", lo=2, integer=True)
    threads = _num(cfg, "threads", "", lo=1, integer=True)
    times = _sweep(p, N_list, "exit", radius, "pinned", False, threads)
    fit = scaling_fit(N_list, times)
    report = {"N": N_list, "mean_time": [float(t) for t in times], **_fit_dict(fit),
              "V_boundary": None, "relative_gap": None}
    if boundary:
        b = boundary_min(stable_point(p), radius, p, QPotOptions(M=M, seed=p.seed), n=n, threads=threads)
        b.to_csv(st.path("boundary.csv"))
        report["V_boundary"] = b.value
        report["V_boundary_argmin"] = [float(v) for v in b.argmin]
        report["boundary_converged"] = b.all_converged
        report["relative_gap"] = abs(fit.slope - b.value) / b.value
    dump_json(report, st.path("report.json"))
    return 0


RUNNERS = {
    "ode": run_ode, "simulate": run_simulate, "qpot": run_qpot,
    "fpt": run_fpt, "fluct": run_fluct, "scaling": run_scaling,
}


def _fail(msg):
    print(f"numerical failure: {msg}", file=sys.stderr)
    return 3


# ----------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hetvoter", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", metavar="PATH", help="YAML config (or an earlier manifest.json)")
        sp.add_argument("--seed", type=int, metavar="U64", help="root seed")
        sp.add_argument("--out", metavar="DIR", help="output directory")
        sp.add_argument("--threads", type=int, metavar="K", help="worker threads")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config entry, e.g. model.N=200 (repeatable)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.perf_counter()
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    try:
        file_cfg = load_file(args.config) if args.config else None
        cfg = resolve_config(file_cfg, args.set, args.seed, args.out, args.threads)
        model_params(cfg)
        with Staging(cfg["out"]) as st:
            code = RUNNERS[args.command](cfg, st)

            def manifest(sums):
                return {
                    "command": args.command,
                    "version": __version__,
                    "backend": BACKEND,
                    "started_utc": stamp,
                    "wall_clock_seconds": time.perf_counter() - started,
                    "exit_code": code,
                    "config": cfg,
                    "outputs": sums,
                }

            st.commit(manifest)
        return code
    except (ValidationError, DegenerateEquilibria) as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        return _fail(str(e))


if __name__ == "__main__":
    sys.exit(main())
