"""Command-line front end.

Config files are flat ``key = value`` text::

    # comment
    model = burgers
    scheme = SGE_BDF2_EX
    tau = 0.01
    snapshot_times = 0.5, 1.0

Keys are case-insensitive; values are numbers, booleans (true/false),
words, or comma-separated lists.  ``ladder`` entries are ``n:tau`` pairs
(or bare ``tau`` values for a fixed grid).  Unknown keys are rejected.
``--override key=value`` is applied after the file.

Exit codes: 0 ok, 2 configuration error, 3 solver failure, 4 IO error.
"""
from __future__ import annotations

import argparse
import functools
import logging
import math
import os
import sys
from typing import Optional

import numpy as np

from .diagnostics import (
    ConvergenceAborted,
    RunIOError,
    l2_error,
    run_convergence_study,
    write_run,
)
from .integrators import IterationError, NearSingularError, SchemeConfig, integrate
from .spatial import SolvabilityError, SolverError

log = logging.getLogger("skewgrad")

MODELS = ("burgers", "ns-periodic", "ns-cavity", "chns")


class ConfigError(ValueError):
    pass


def _float_list(s):
    return [float(x) for x in s.split(",") if x.strip()]


def _word_list(s):
    return [x.strip() for x in s.split(",") if x.strip()]


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ladder(s):
    out = []
    for item in _word_list(s):
        if ":" in item:
            n, tau = item.split(":")
            out.append((int(n), float(tau)))
        else:
            out.append((None, float(item)))
    return out


# key -> (parser, default)
KEYS = {
    "model": (str.lower, None),
    "scheme": (str, None),
    "schemes": (_word_list, None),
    "n": (int, None),
    "tau": (float, None),
    "t_end": (float, 1.0),
    "nu": (float, None),
    "re": (float, None),
    "rho": (float, 1.0),
    "mobility": (float, None),
    "gamma": (float, None),
    "epsilon": (float, None),
    "a": (float, None),
    "lid": (float, 1.0),
    "forced": (_bool, None),
    "initial": (str.lower, None),
    "radius": (float, 0.15),
    "snapshot_times": (_float_list, []),
    "ladder": (_ladder, None),
    "reference": (str, None),
    "ref_tau": (float, None),
    "ref_n": (int, None),
    "stokes_method": (str.lower, "uzawa"),
    "out": (str, None),
    "seed": (int, 0),
    "label": (str, None),
}

POSITIVE = ("n", "tau", "t_end", "nu", "re", "rho", "mobility", "gamma", "epsilon", "ref_tau", "ref_n", "radius")

MODEL_DEFAULTS = {
    "burgers": dict(scheme="SGE_BDF2_EX", n=256, tau=0.01, nu=0.01, reference="PG(6)", ref_tau=1e-4),
    "ns-periodic": dict(scheme="SGE_CN", n=256, tau=1e-3, re=100.0, forced=True),
    "ns-cavity": dict(scheme="SGE_CN", n=128, tau=4e-3, re=5000.0, t_end=10.0),
    "chns": dict(scheme="SGE_SBDF2", n=128, tau=1e-3, nu=0.01, mobility=0.01, gamma=0.01,
                 epsilon=0.01, a=3.0, initial="bubble", forced=False),
}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        k, v = (p.strip() for p in line.split("=", 1))
        raw[k.lower()] = v
    return raw


def resolve_config(raw: dict) -> dict:
    """Validate raw string values and fill model defaults."""
    cfg = {}
    for k, v in raw.items():
        if k not in KEYS:
            raise ConfigError(f"unknown config key {k!r}")
        try:
            cfg[k] = KEYS[k][0](v) if isinstance(v, str) else v
        except ValueError as exc:
            raise ConfigError(f"bad value for {k!r}: {exc}") from exc
    model = cfg.get("model")
    if model not in MODELS:
        raise ConfigError(f"key 'model' must be one of {MODELS}, got {model!r}")
    for k, (_, d) in KEYS.items():
        if k not in cfg:
            cfg[k] = MODEL_DEFAULTS[model].get(k, d)
    for k in POSITIVE:
        v = cfg.get(k)
        if v is not None and not (v > 0 and math.isfinite(v)):
            raise ConfigError(f"key {k!r} must be positive, got {v}")
    if cfg["a"] is not None and cfg["a"] < 0:
        raise ConfigError(f"key 'a' must be nonnegative, got {cfg['a']}")
    if cfg["n"] % 2 or cfg["n"] < 4:
        raise ConfigError(f"key 'n' must be even and at least 4, got {cfg['n']}")
    if cfg["ladder"]:
        for n, tau in cfg["ladder"]:
            if tau <= 0 or (n is not None and (n < 4 or n % 2)):
                raise ConfigError(f"bad ladder level {n}:{tau}")
    try:
        _scheme_for(cfg, cfg["scheme"], cfg["tau"])
    except ValueError as exc:
        raise ConfigError(f"key 'scheme': {exc}") from exc
    return cfg


def load_config(path: Optional[str], overrides=(), preset: Optional[dict] = None) -> dict:
    raw = {k: str(v) if not isinstance(v, list) else ",".join(map(str, v))
           for k, v in (preset or {}).items()}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        raw.update(parse_config_text(text, path))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--override expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        raw[k.strip().lower()] = v.strip()
    return resolve_config(raw)


# ---------------------------------------------------------------------------
# model dispatch
# ---------------------------------------------------------------------------


def _scheme_for(cfg, name, tau):
    from .models import CHNSConfig, NSConfig, burgers_config

    model = cfg["model"]
    if model == "burgers":
        return burgers_config(name, tau)
    if model in ("ns-periodic", "ns-cavity"):
        return NSConfig(name, tau)
    return CHNSConfig(name, tau, A=cfg["a"] if cfg["a"] is not None else 3.0)


def build_model(cfg, n=None):
    from .models import BurgersModel, CHNSModel, NSCavityModel, NSPeriodicModel

    n = n or cfg["n"]
    model = cfg["model"]
    if model == "burgers":
        return BurgersModel(n=n, nu=cfg["nu"])
    if model == "ns-periodic":
        return NSPeriodicModel(n=n, re=cfg["re"], forced=cfg["forced"])
    if model == "ns-cavity":
        return NSCavityModel(n=n, re=cfg["re"], lid=cfg["lid"], stokes_method=cfg["stokes_method"])
    return CHNSModel(n=n, rho=cfg["rho"], nu=cfg["nu"], mobility=cfg["mobility"],
                     gamma=cfg["gamma"], epsilon=cfg["epsilon"], forced=cfg["forced"])


def run_one(cfg, scheme=None, tau=None, n=None, stop_on_nan=True):
    """Run a single configuration and return ``(model, record)``."""
    from .models import burgers_run, chns_run, ns_run

    scheme = scheme or cfg["scheme"]
    tau = tau or cfg["tau"]
    model = build_model(cfg, n)
    sc = _scheme_for(cfg, scheme, tau)
    snaps = cfg["snapshot_times"]
    if cfg["model"] == "burgers":
        rec = burgers_run(model, sc, cfg["t_end"], snaps, stop_on_nan=stop_on_nan)
    elif cfg["model"] in ("ns-periodic", "ns-cavity"):
        rec = ns_run(model, sc, cfg["t_end"], snaps, stop_on_nan=stop_on_nan)
    else:
        init = model.manufactured_initial() if cfg["initial"] == "manufactured" else model.bubble_initial(cfg["radius"])
        rec = chns_run(model, sc, cfg["t_end"], init, snaps, stop_on_nan=stop_on_nan)
    rec.meta["n"] = model.n
    return model, rec


# ---------------------------------------------------------------------------
# convergence levels (module level so worker processes can pickle them)
# ---------------------------------------------------------------------------


def _burgers_reference(cfg):
    from .models import BurgersModel

    model = BurgersModel(n=cfg["ref_n"] or cfg["n"], nu=cfg["nu"])
    sc = SchemeConfig(kind=cfg["reference"], tau=cfg["ref_tau"])
    u, _ = integrate(model.flow, model.initial(), sc, cfg["t_end"])
    return u


def _restrict_periodic(u, n):
    """Sample a finer periodic field on an ``n``-point grid (exact for nested grids)."""
    step = u.shape[-1] // n
    if step * n != u.shape[-1]:
        raise ConfigError(f"reference grid {u.shape[-1]} is not a multiple of {n}")
    return u[..., ::step]


def level_errors(cfg, schemes, ref, level):
    h, tau = level
    n = int(round(1.0 / h))
    out = {}
    for s in schemes:
        model, rec = run_one(cfg, s, tau, n)
        final = rec.final_state
        prefix = f"{s}." if len(schemes) > 1 else ""
        if cfg["model"] == "burgers":
            out[prefix + "u"] = l2_error(model.grid.inner_product(), final, _restrict_periodic(ref, n))
        elif cfg["model"] == "ns-periodic":
            out[prefix + "v"] = l2_error(model.ip, final, model.exact(cfg["t_end"]))
        elif cfg["model"] == "chns":
            ex = model.exact(cfg["t_end"])
            out[prefix + "v"] = l2_error(model.ipv, final.v, ex.v)
            out[prefix + "phi"] = l2_error(model.ip, final.phi, ex.phi)
        else:
            raise ConfigError("converge supports burgers, ns-periodic and chns")
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _out_dir(args, cfg, default):
    return args.out or cfg["out"] or default


def _summary(rec):
    e = rec.energy[-1] if rec.energy else math.nan
    m = rec.mass[-1] if rec.mass else math.nan
    msg = f"t={rec.times[-1]:.6g} energy={e:.10e} mass={m:.10e}"
    if "diverged_at" in rec.meta:
        msg += f" diverged at t={rec.meta['diverged_at']:.6g}"
    return msg


def cmd_run(args, preset=None):
    cfg = load_config(args.config, args.override, preset)
    _, rec = run_one(cfg)
    out = _out_dir(args, cfg, "out/run")
    write_run(rec, out, cfg)
    print(_summary(rec))
    return 0


def cmd_converge(args, preset=None):
    cfg = load_config(args.config, args.override, preset)
    if not cfg["ladder"]:
        raise ConfigError("converge needs a 'ladder'")
    schemes = cfg["schemes"] or [cfg["scheme"]]
    for s in schemes:
        try:
            _scheme_for(cfg, s, cfg["tau"])
        except ValueError as exc:
            raise ConfigError(f"key 'schemes': {exc}") from exc
    ref = _burgers_reference(cfg) if cfg["model"] == "burgers" else None
    variables = {"burgers": ["u"], "ns-periodic": ["v"], "chns": ["v", "phi"]}.get(cfg["model"])
    if variables is None:
        raise ConfigError("converge supports burgers, ns-periodic and chns")
    if len(schemes) > 1:
        variables = [f"{s}.{v}" for s in schemes for v in variables]
    out = _out_dir(args, cfg, "out/converge")
    os.makedirs(out, exist_ok=True)
    ladder = [(1.0 / (n or cfg["n"]), tau) for n, tau in cfg["ladder"]]
    fn = functools.partial(level_errors, cfg, schemes, ref)
    table = run_convergence_study(fn, ladder, variables, jobs=args.jobs,
                                  csv_path=os.path.join(out, "table.csv"))
    print(table.format())
    return 0


def cmd_compare_schemes(args, preset=None):
    cfg = load_config(args.config, args.override, preset or {"model": "burgers", "tau": 0.05})
    if cfg["model"] != "burgers":
        raise ConfigError("compare-schemes runs the Burgers comparison")
    schemes = cfg["schemes"] or ["SGE_BDF2_EX", "BDF2_EX_CLASSIC"]
    out = _out_dir(args, cfg, "out/compare")
    os.makedirs(out, exist_ok=True)
    lines = []
    for s in schemes:
        model, rec = run_one(cfg, s, stop_on_nan=False)
        write_run(rec, os.path.join(out, s), cfg)
        x = model.grid.coords()
        u = rec.final_state
        try:
            with open(os.path.join(out, f"solution_{s}.csv"), "w", encoding="utf-8") as fh:
                fh.write("x,u\n")
                for xi, ui in zip(x, u):
                    fh.write(f"{xi:.16e},{ui:.16e}\n")
        except OSError as exc:
            raise RunIOError(f"cannot write solution for {s}: {exc}") from exc
        lines.append(f"{s}: {_summary(rec)}")
    with open(os.path.join(out, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


CAVITY_PRESET = {"model": "ns-cavity", "scheme": "SGE_CN", "re": 5000, "tau": 4e-3, "t_end": 10,
                 "n": 128, "snapshot_times": [4, 6, 10]}


def cmd_cavity(args):
    return cmd_run(args, CAVITY_PRESET)


def bubbles_preset():
    from .models import BUBBLE_TIMES

    return {"model": "chns", "scheme": "SGE_SBDF2", "n": 128, "tau": 1e-3, "t_end": 10,
            "nu": 0.001, "rho": 1, "mobility": 0.01, "gamma": 0.01, "epsilon": 0.01, "a": 3,
            "initial": "bubble", "snapshot_times": list(BUBBLE_TIMES)}


def cmd_bubbles(args):
    return cmd_run(args, bubbles_preset())


COMMANDS = {
    "run": cmd_run,
    "converge": cmd_converge,
    "compare-schemes": cmd_compare_schemes,
    "cavity": cmd_cavity,
    "bubbles": cmd_bubbles,
}


def build_parser():
    p = argparse.ArgumentParser(prog="skewgrad", description="Skew gradient embedding experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--jobs", type=int, default=1, help="parallel ladder levels")
        sp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command in ("run", "converge") and not args.config:
        print("error: --config is required", file=sys.stderr)
        return 2
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, NearSingularError, IterationError, SolvabilityError, FloatingPointError,
            ConvergenceAborted) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except (RunIOError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
