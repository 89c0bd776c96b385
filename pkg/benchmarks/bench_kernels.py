"""Compare the compiled and numpy path steppers.

Usage: python3 benchmarks/bench_kernels.py [--paths 64] [--T 5] [--dt 0.01]

Prints wall time per backend, steps per second and the largest difference
between the two backends' per-path results.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from stochwave import kernels
from stochwave.grid import GridSpec
from stochwave.models import nagumo
from stochwave.modwave import solve_modified_wave
from stochwave.noiseterms import make_noise_params
from stochwave.profiles import compute_spectral, linearize, nagumo_front, solve_wave
from stochwave.simulate import PathProblem, SimConfig, run_paths


def setup(sigma=0.05, L=30.0, dx=0.1):
    model = nagumo(0.3, noise="nagumo_quadratic")
    spec = GridSpec(L, dx, 1)
    g = nagumo_front(spec, 0.3, 1.0, model)
    wave = solve_wave(model, spec, g.phi0, g.c0)
    op = linearize(model, wave)
    sd = compute_spectral(model, wave, op, probe=False)
    p = make_noise_params(model, wave, sd, sigma)
    mw = solve_modified_wave(wave, op, sd, p)
    return PathProblem(model, mw, sd.psi, p)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=64)
    ap.add_argument("--T", type=float, default=5.0)
    ap.add_argument("--dt", type=float, default=0.01)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    prob = setup()
    cfg = SimConfig(dt=args.dt, T=args.T, scheme="imex_cnab_em", stride=50)
    ids = range(args.paths)
    n_pts = prob.spec.n_points
    print(f"grid points {n_pts}, steps/path {cfg.n_steps}, paths {args.paths}")
    results = {}
    for backend in kernels.AVAILABLE:
        best = np.inf
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            out = run_paths(prob.mw.phi_sigma, 0.0, prob, cfg, ids, backend, keep_series=False)
            best = min(best, time.perf_counter() - t0)
        results[backend] = np.array([[s.gamma_T, s.supN, s.l2_V_T] for s in out])
        rate = args.paths * cfg.n_steps / best
        print(f"{backend:>7}: {best:8.3f} s  ({rate:,.0f} path-steps/s)")
    if len(results) == 2:
        diff = np.max(np.abs(results["cython"] - results["numpy"]))
        print(f"max |cython - numpy| over (gamma_T, supN, l2_V_T): {diff:.3e}")
    else:
        print("compiled extension not built; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
