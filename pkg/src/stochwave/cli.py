"""Command-line interface: ``stochwave <command> [options]``.

Commands: wave, modwave, simulate, ensemble, speed, experiment. Settings come
from built-in defaults, then an optional flat config file (``key = value``
lines), then command-line flags. Artifacts are named by a hash of the
settings that determine them and are never overwritten.

Exit codes: 0 ok, 1 configuration error, 2 numerical failure, 3 missing input.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .ensemble import (SpectralDecayError, check_rates, resolve_workers, run_ensemble,
                       speed_correction, summaries_jsonl)
from .experiments import ExperimentSpec, run_experiment, versions, write_experiment
from .grid import GridError, GridFn, GridSpec
from .iofmt import atomic_write_json, atomic_write_text, dumps_json
from .models import ModelError, ModelSpec
from .modwave import (FixedPointError, PhaseFitError, load_modified_wave, save_modified_wave,
                      solve_initial_phase, solve_modified_wave)
from .noiseterms import NoiseParamError, make_noise_params
from .profiles import (DomainError, NewtonError, SpectralError, check_boundary_decay,
                       compute_spectral, linearize, load_wave, nagumo_front, save_wave,
                       solve_fhn_pulse, solve_wave)
from .simulate import BlowUpError, PathProblem, SimConfig, run_paths, series_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_MISSING = 0, 1, 2, 3

DEFAULTS = {
    "model": "nagumo", "a": "auto", "rho": 1.0, "varrho": 0.002, "gamma_fhn": 1.0,
    "sigma": 0.05, "L": 30.0, "dx": 0.1, "dt": 0.01, "T": 10.0, "paths": 100, "seed": 0,
    "epsilon": 0.0, "alpha": 0.0, "eta": math.inf,
    # extensions beyond the core keys
    "noise": "auto", "theta": 1.0, "scheme": "imex_cnab_em", "stride": 10,
}
DEFAULT_A = {"nagumo": 0.3, "fhn": 0.1}
INT_KEYS = {"paths", "seed", "stride"}
STR_KEYS = {"model", "noise", "scheme"}
WAVE_KEYS = ("model", "a", "rho", "varrho", "gamma_fhn", "L", "dx")
MODWAVE_KEYS = WAVE_KEYS + ("sigma", "noise", "theta")


class ConfigError(ValueError):
    pass


class MissingInputError(FileNotFoundError):
    pass


NUMERIC_ERRORS = (NewtonError, SpectralError, FixedPointError, PhaseFitError, BlowUpError,
                  SpectralDecayError, FloatingPointError, np.linalg.LinAlgError)
CONFIG_ERRORS = (ConfigError, ModelError, GridError, DomainError, NoiseParamError, ValueError)


# ------------------------------------------------------------------ config

def _coerce(key: str, raw):
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}; allowed: {', '.join(sorted(DEFAULTS))}")
    if key in STR_KEYS or (key == "a" and str(raw).strip() == "auto"):
        return str(raw).strip()
    try:
        if key in INT_KEYS:
            val = float(raw)
            if val != int(val):
                raise ValueError
            return int(val)
        return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """``key = value`` (or ``key: value``) lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":" if ":" in line else None
        if sep is None:
            raise ConfigError(f"{source}:{n}: expected 'key = value'")
        key, val = (s.strip() for s in line.split(sep, 1))
        if key in out:
            raise ConfigError(f"{source}:{n}: duplicate key {key!r}")
        out[key] = _coerce(key, val)
    return out


def load_config_file(path) -> dict:
    if not os.path.exists(path):
        raise MissingInputError(f"config file not found: {path}")
    with open(path) as fh:
        return parse_config_text(fh.read(), str(path))


def validate_config(cfg: dict) -> dict:
    cfg = dict(cfg)
    if cfg["model"] not in ("nagumo", "fhn"):
        raise ConfigError(f"model must be 'nagumo' or 'fhn', got {cfg['model']!r}")
    if cfg["noise"] == "auto":
        cfg["noise"] = "nagumo_paper" if cfg["model"] == "nagumo" else "fhn_paper"
    if cfg["a"] == "auto":
        cfg["a"] = DEFAULT_A[cfg["model"]]
    for key in ("L", "dx", "dt", "T", "rho", "eta"):
        if not cfg[key] > 0:
            raise ConfigError(f"{key} must be positive, got {cfg[key]}")
    for key in ("sigma", "epsilon", "alpha"):
        if not (cfg[key] >= 0 and math.isfinite(cfg[key])):
            raise ConfigError(f"{key} must be finite and nonnegative, got {cfg[key]}")
    if cfg["paths"] < 1 or cfg["seed"] < 0 or cfg["stride"] < 1:
        raise ConfigError("paths and stride must be >= 1, seed >= 0")
    if cfg["dx"] >= cfg["L"]:
        raise ConfigError("dx must be smaller than L")
    build_model(cfg)  # raises ModelError for a outside (0, 1) and similar
    return cfg


def config_hash(cfg: dict, keys=None) -> str:
    """sha256 of the canonical JSON of the selected keys (order independent)."""
    sel = {k: cfg[k] for k in (keys or sorted(cfg))}
    blob = json.dumps(sel, sort_keys=True, default=repr, allow_nan=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_model(cfg: dict) -> ModelSpec:
    noise = cfg["noise"]
    if cfg["model"] == "nagumo":
        noise = "nagumo_paper" if noise == "auto" else noise
        return ModelSpec("nagumo", a=cfg["a"], rho=cfg["rho"], noise=noise, theta=cfg["theta"])
    noise = "fhn_paper" if noise == "auto" else noise
    return ModelSpec("fhn", a=cfg["a"], rho=cfg["rho"], varrho=cfg["varrho"],
                     gamma_fhn=cfg["gamma_fhn"], noise=noise)


# ------------------------------------------------------------------ artifacts

def _path(out, stem, h, ext):
    return os.path.join(out, f"{stem}_{h}.{ext}")


def _write_once(path, text: str) -> bool:
    """Write unless the artifact already exists; returns True when written."""
    if os.path.exists(path):
        return False
    atomic_write_text(path, text)
    return True


def _write_manifest(out, command, cfg, h, inputs, outputs, extra=None):
    man = {"command": command, "config": dict(cfg),
           "config_hash": h, "inputs": sorted(inputs), "outputs": sorted(outputs),
           "seed": cfg.get("seed"), "versions": versions()}
    if extra:
        man.update(extra)
    path = _path(out, command, h, "manifest.json")
    if not os.path.exists(path):
        atomic_write_json(path, man)
    return path


def _emit(obj) -> None:
    print(dumps_json(obj))


def _require(path, what, hint):
    if not os.path.exists(path):
        raise MissingInputError(f"{what} not found: {path} (run `stochwave {hint}` first)")
    return path


def _load_wave(cfg, out):
    path = _require(_path(out, "wave", config_hash(cfg, WAVE_KEYS), "dat"), "wave file", "wave")
    wave, sd = load_wave(path)
    if sd is None:
        raise MissingInputError(f"{path} has no spectral data")
    wave = replace(wave, model=build_model(cfg))
    return wave, sd, path


def _load_modwave(cfg, out):
    path = _require(_path(out, "modwave", config_hash(cfg, MODWAVE_KEYS), "dat"),
                    "modified-wave file", "modwave")
    return load_modified_wave(path), path


def _sim_config(cfg, stop_on_exit=False) -> SimConfig:
    return SimConfig(dt=cfg["dt"], T=cfg["T"], epsilon=cfg["epsilon"], alpha=cfg["alpha"],
                     eta=cfg["eta"], seed=cfg["seed"], scheme=cfg["scheme"], stride=cfg["stride"],
                     stop_on_exit=stop_on_exit)


def _initial_state(kind: str, amp: float, mw, psi):
    if kind == "wave":
        return mw.phi_sigma.copy(), 0.0
    if kind == "bump":
        spec = mw.phi_sigma.spec
        bump = np.zeros((spec.n_points, spec.n_components))
        bump[:, 0] = amp * np.exp(-0.5 * (spec.xi - 2.0) ** 2)
        u0 = mw.phi_sigma + GridFn(spec, bump)
        return u0, solve_initial_phase(u0, mw, psi).gamma0
    raise ConfigError(f"unknown --u0 {kind!r} (use 'wave' or 'bump')")


# ------------------------------------------------------------------ commands

def cmd_wave(cfg, args):
    model = build_model(cfg)
    spec = GridSpec(cfg["L"], cfg["dx"], model.n_components)
    if model.kind == "nagumo":
        guess = nagumo_front(spec, model.a, model.rho, model)
        wave = solve_wave(model, spec, guess.phi0, guess.c0)
    else:
        wave = solve_fhn_pulse(model, spec)
    edge = check_boundary_decay(wave)
    op = linearize(model, wave)
    sd = compute_spectral(model, wave, op, probe=not args.no_probe)
    h = config_hash(cfg, WAVE_KEYS)
    path = _path(args.out, "wave", h, "dat")
    if not os.path.exists(path):
        save_wave(path, wave, sd)
    _write_manifest(args.out, "wave", {k: cfg[k] for k in WAVE_KEYS}, h, [], [path])
    _emit({"wave": path, "c0": wave.c0, "residual": wave.residual, "lambda0": sd.lambda0,
           "beta_gap": sd.beta_gap, "M_const": sd.M_const, "boundary_slope": edge})


def _noise(cfg, wave, sd, special):
    return make_noise_params(wave.model, wave, sd, cfg["sigma"], special_case=special)


def cmd_modwave(cfg, args):
    wave, sd, wpath = _load_wave(cfg, args.out)
    p = _noise(cfg, wave, sd, args.special_case)
    op = linearize(wave.model, wave)
    mw = solve_modified_wave(wave, op, sd, p)
    h = config_hash(cfg, MODWAVE_KEYS)
    path = _path(args.out, "modwave", h, "dat")
    if not os.path.exists(path):
        save_modified_wave(path, mw, sd.psi)
    _write_manifest(args.out, "modwave", {k: cfg[k] for k in MODWAVE_KEYS}, h, [wpath], [path])
    _emit({"modwave": path, "c_sigma": mw.c_sigma, "c0": wave.c0, "iterations": mw.iterations,
           "residual": mw.residual, "theta0": p.theta0})


def _problem(cfg, args):
    wave, sd, wpath = _load_wave(cfg, args.out)
    mw, mpath = _load_modwave(cfg, args.out)
    p = _noise(cfg, wave, sd, args.special_case)
    return wave, sd, PathProblem(wave.model, mw, sd.psi, p), [wpath, mpath]


def _run_key(cfg, args, *extra):
    return dict(cfg, u0=args.u0, bump=args.bump, special_case=bool(args.special_case),
                **dict(extra))


def cmd_simulate(cfg, args):
    wave, sd, prob, inputs = _problem(cfg, args)
    sc = _sim_config(cfg, stop_on_exit=args.stop_on_exit)
    check_rates(sc, sd.beta_gap)
    u0, g0 = _initial_state(args.u0, args.bump, prob.mw, prob.psi)
    s = run_paths(u0, g0, prob, sc, [args.path_id], keep_series=True)[0]
    if s.blowup:
        raise BlowUpError(s.blowup_time)
    key = _run_key(cfg, args, ("path_id", args.path_id), ("stop_on_exit", args.stop_on_exit))
    h = config_hash(key)
    csv = _path(args.out, "simulate", h, "csv")
    js = _path(args.out, "simulate", h, "json")
    _write_once(csv, series_csv(s.series))
    rec = s.record()
    rec.update(N1_T=s.N1_T, N2_T=s.N2_T, h1_V_T=s.h1_V_T, c_sigma=prob.mw.c_sigma)
    _write_once(js, dumps_json(rec, indent=1) + "\n")
    _write_manifest(args.out, "simulate", key, h, inputs, [csv, js])
    _emit(dict(rec, series=csv))


def cmd_ensemble(cfg, args):
    wave, sd, prob, inputs = _problem(cfg, args)
    sc = _sim_config(cfg, stop_on_exit=args.stop_on_exit)
    check_rates(sc, sd.beta_gap)
    u0, g0 = _initial_state(args.u0, args.bump, prob.mw, prob.psi)
    st, summ = run_ensemble(u0, prob, sc, cfg["paths"], workers=args.workers, gamma0=g0)
    key = _run_key(cfg, args, ("stop_on_exit", args.stop_on_exit))
    h = config_hash(key)
    jl = _path(args.out, "ensemble", h, "jsonl")
    js = _path(args.out, "ensemble", h, "json")
    _write_once(jl, summaries_jsonl(summ))
    _write_once(js, dumps_json(st.to_dict(), indent=1) + "\n")
    _write_manifest(args.out, "ensemble", key, h, inputs, [jl, js],
                    {"seeds": {"base": cfg["seed"], "path_ids": [0, cfg["paths"] - 1]}})
    _emit(dict(st.to_dict(), jsonl=jl, workers=resolve_workers(args.workers)))


def cmd_speed(cfg, args):
    wave, sd, prob, inputs = _problem(cfg, args)
    op = linearize(wave.model, wave)
    sc = speed_correction(prob, op, sd)
    key = dict(cfg, special_case=bool(args.special_case))
    for k in ("dt", "T", "paths", "seed", "epsilon", "alpha", "eta", "scheme", "stride"):
        key.pop(k)
    h = config_hash(key)
    js = _path(args.out, "speed", h, "json")
    d = sc.to_dict()
    _write_once(js, dumps_json(d, indent=1) + "\n")
    _write_manifest(args.out, "speed", key, h, inputs, [js])
    _emit(dict(d, special_case=bool(args.special_case), path=js))


def cmd_experiment(cfg, args):
    model = build_model(cfg)
    sim = _sim_config(cfg)
    sweep = {}
    for item in args.sweep or []:
        if "=" not in item:
            raise ConfigError(f"--sweep expects name=v1,v2,..., got {item!r}")
        name, vals = item.split("=", 1)
        try:
            sweep[name.strip()] = [float(v) for v in vals.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"bad --sweep values {vals!r}") from None
    spec = ExperimentSpec(args.name, model, cfg["L"], cfg["dx"], sim, sweep, cfg["paths"],
                          workers=args.workers)
    if args.name not in ("steepening", "stability"):
        raise ConfigError(f"unknown experiment {args.name!r}")
    d = os.path.join(args.out, f"experiment_{args.name}_{spec.config_hash()}")
    if os.path.exists(os.path.join(d, "manifest.json")):
        _emit({"experiment": args.name, "dir": d, "reused": True})
        return
    tables, checks = run_experiment(spec)
    os.makedirs(d, exist_ok=True)
    files = write_experiment(d, spec, tables, checks)
    _emit({"experiment": args.name, "dir": d, "tables": files, "checks": checks})


COMMANDS = {"wave": cmd_wave, "modwave": cmd_modwave, "simulate": cmd_simulate,
            "ensemble": cmd_ensemble, "speed": cmd_speed, "experiment": cmd_experiment}


# ------------------------------------------------------------------ parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _add_config_flags(p):
    for key, val in DEFAULTS.items():
        names = [f"--{key}"]
        if "_" in key:
            names.append("--" + key.replace("_", "-"))
        p.add_argument(*names, dest=f"cfg_{key}", default=None, metavar=key.upper(),
                       help=f"(default {val})")
    p.add_argument("--config", help="flat 'key = value' config file")
    p.add_argument("--out", default="stochwave_out", help="artifact directory")
    p.add_argument("--workers", type=int, default=None,
                   help="worker processes (env STOCHWAVE_WORKERS, default: CPU count)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="stochwave", description="Travelling waves under multiplicative noise.")
    ap.add_argument("--version", action="version", version=f"stochwave {__version__}")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    helps = {"wave": "deterministic wave, adjoint eigenfunction and spectral gap",
             "modwave": "stochastically modified wave (Phi_sigma, c_sigma)",
             "simulate": "one sample path with phase tracking",
             "ensemble": "Monte Carlo ensemble (JSONL per path + summary)",
             "speed": "second-order limiting wave speed",
             "experiment": "steepening or stability tables"}
    for name, h in helps.items():
        p = sub.add_parser(name, help=h)
        _add_config_flags(p)
        if name == "wave":
            p.add_argument("--no-probe", action="store_true", help="skip the semigroup probe")
        if name in ("modwave", "simulate", "ensemble", "speed"):
            p.add_argument("--special-case", action="store_true",
                           help="validate g(Phi0) = theta0 Phi0' and use the closed forms")
        if name in ("simulate", "ensemble"):
            p.add_argument("--u0", default="wave", choices=("wave", "bump"))
            p.add_argument("--bump", type=float, default=0.05, help="bump amplitude for --u0 bump")
            p.add_argument("--stop-on-exit", action="store_true")
        if name == "simulate":
            p.add_argument("--path-id", type=int, default=0)
        if name == "experiment":
            p.add_argument("name", help="steepening or stability")
            p.add_argument("--sweep", action="append", metavar="NAME=V1,V2",
                           help="override a sweep list, e.g. sigma=0,0.05,0.1")
    return ap


def resolve_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        cfg.update(load_config_file(args.config))
    for key in DEFAULTS:
        raw = getattr(args, f"cfg_{key}")
        if raw is not None:
            cfg[key] = _coerce(key, raw)
    return validate_config(cfg)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        if args.workers is not None and args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        os.makedirs(args.out, exist_ok=True)
        COMMANDS[args.command](cfg, args)
        return EXIT_OK
    except MissingInputError as exc:
        print(f"stochwave: missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except NUMERIC_ERRORS as exc:
        print(f"stochwave: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CONFIG_ERRORS as exc:
        print(f"stochwave: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
