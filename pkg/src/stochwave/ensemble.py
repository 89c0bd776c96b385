"""Monte Carlo harness: exit probabilities, phase statistics and the speed correction."""
from __future__ import annotations

import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats
from scipy.integrate import trapezoid

from .grid import GridFn, norm_L2, shift
from .iofmt import atomic_write_json, atomic_write_text, dumps_json
from .modwave import solve_initial_phase
from .noiseterms import S_Phi, a_sigma, b_fn
from .profiles import LinearizedOperator, SpectralData
from .simulate import (PathProblem, SimConfig, brownian_increments, init_path,
                       run_paths, step)
from . import kernels

WORKERS_ENV = "STOCHWAVE_WORKERS"
Z95 = 1.959963984540054


class SpectralDecayError(RuntimeError):
    pass


def wilson_ci(k: int, n: int, z: float = Z95):
    """Wilson score interval for a binomial proportion k/n."""
    if n <= 0:
        raise ValueError("n must be positive")
    p = k / n
    den = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return lo, hi


def resolve_workers(workers=None) -> int:
    """Explicit value, else $STOCHWAVE_WORKERS, else the number of CPUs."""
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


@dataclass
class EnsembleStats:
    n_paths: int
    n_exit: int
    p_hat: float
    ci_95: tuple
    mean_speed: float
    mean_speed_se: float
    mean_phase: float
    mean_phase_se: float
    var_phase: float
    var_phase_se: float
    mean_supN: float
    n_blowup: int
    c_sigma: float
    T: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ci_95"] = list(self.ci_95)
        return d


def aggregate(summaries, c_sigma: float, T: float) -> EnsembleStats:
    """Deterministic fold over summaries sorted by path id."""
    summaries = sorted(summaries, key=lambda s: s.path_id)
    n = len(summaries)
    if n == 0:
        raise ValueError("no paths to aggregate")
    ok = [s for s in summaries if not s.blowup]
    k = sum(1 for s in summaries if s.exited)
    lo, hi = wilson_ci(k, n)
    m = len(ok)
    if m:
        phase = np.array([s.gamma_T - s.gamma0 - c_sigma * T for s in ok])
        speed = np.array([(s.gamma_T - s.gamma0) / T for s in ok])
        supN = np.array([s.supN for s in ok])
        sd = phase.std(ddof=1) if m > 1 else 0.0
        var = phase.var(ddof=1) if m > 1 else 0.0
        ms, mss = float(speed.mean()), float(speed.std(ddof=1) / np.sqrt(m)) if m > 1 else 0.0
        mp, mps = float(phase.mean()), float(sd / np.sqrt(m))
        vse = float(var * np.sqrt(2.0 / (m - 1))) if m > 1 else 0.0
        msup = float(supN.mean())
    else:
        ms = mss = mp = mps = var = vse = msup = float("nan")
    return EnsembleStats(n, k, k / n, (lo, hi), ms, mss, mp, mps, float(var), vse, msup,
                         n - m, float(c_sigma), float(T))


def _chunk_worker(args):
    u0, gamma0, problem, cfg, ids, backend, keep = args
    return run_paths(u0, gamma0, problem, cfg, ids, backend, keep_series=keep)


def run_summaries(u0: GridFn, gamma0: float, problem: PathProblem, cfg: SimConfig,
                  n_paths: int, workers=None, backend: str = None, keep_series: bool = False,
                  first_path: int = 0):
    """PathSummary list for path ids first_path .. first_path + n_paths - 1."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    backend = backend or kernels.BACKEND
    ids = list(range(first_path, first_path + n_paths))
    nw = resolve_workers(workers)
    size = 128 if backend == "numpy" else max(1, min(256, -(-n_paths // (4 * nw))))
    chunks = [ids[i:i + size] for i in range(0, n_paths, size)]
    jobs = [(u0, gamma0, problem, cfg, ch, backend, keep_series) for ch in chunks]
    if nw == 1 or len(chunks) == 1:
        parts = [_chunk_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=nw) as ex:
            parts = list(ex.map(_chunk_worker, jobs))
    out = [s for part in parts for s in part]
    return sorted(out, key=lambda s: s.path_id)


def summaries_jsonl(summaries) -> str:
    return "".join(dumps_json(s.record()) + "\n"
                   for s in sorted(summaries, key=lambda s: s.path_id))


def check_rates(cfg: SimConfig, beta: float) -> None:
    if cfg.alpha > 0 and cfg.epsilon + cfg.alpha / 2 >= beta:
        warnings.warn(f"epsilon + alpha/2 = {cfg.epsilon + cfg.alpha / 2:.3g} >= beta = {beta:.3g}",
                      RuntimeWarning, stacklevel=2)


def run_ensemble(u0: GridFn, problem: PathProblem, cfg: SimConfig, n_paths: int,
                 workers=None, gamma0: float = None, jsonl_path=None, report_path=None,
                 backend: str = None, keep_series: bool = False, beta: float = None):
    """Run ``n_paths`` independent paths and aggregate.

    The initial phase is fitted with ``solve_initial_phase`` unless given.
    Returns ``(EnsembleStats, summaries)``; blow-ups are counted, not raised.
    """
    if beta is not None:
        check_rates(cfg, beta)
    if gamma0 is None:
        gamma0 = solve_initial_phase(u0, problem.mw, problem.psi).gamma0
    summaries = run_summaries(u0, gamma0, problem, cfg, n_paths, workers, backend, keep_series)
    st = aggregate(summaries, problem.mw.c_sigma, cfg.T)
    if jsonl_path is not None:
        atomic_write_text(jsonl_path, summaries_jsonl(summaries))
    if report_path is not None:
        atomic_write_json(report_path, st.to_dict())
    return st, summaries


def phase_diffusion_test(problem: PathProblem, cfg: SimConfig, n_paths: int, workers=None,
                         backend: str = None) -> dict:
    """Compare Var(Gamma(t) - c_sigma t) with sigma^2 b^2 t in the proportional case.

    Starts every path at u0 = Phi_sigma. Returns a dict with per-time
    variances, theory, standard errors and z-scores, a chi-square statistic at
    the final time, the mean phase offset and the fraction of paths with
    ||V(T)|| <= 1e-2.
    """
    if problem.noise.theta0 is None:
        raise ValueError("phase diffusion test needs the proportional special case (theta0)")
    mw, psi = problem.mw, problem.psi
    sigma = problem.noise.sigma
    b = b_fn(mw.phi_sigma, psi, problem.model, problem.noise.cutoffs)
    summaries = run_summaries(mw.phi_sigma, 0.0, problem, cfg, n_paths, workers, backend,
                              keep_series=True)
    ok = [s for s in summaries if not s.blowup]
    nrec = min(len(s.series) for s in ok)
    t = ok[0].series[:nrec, 0]
    G = np.array([s.series[:nrec, 1] for s in ok]) - mw.c_sigma * t[None, :]
    n = G.shape[0]
    var = G.var(axis=0, ddof=1)
    mean = G.mean(axis=0)
    theory = sigma ** 2 * b ** 2 * t
    var_se = theory * np.sqrt(2.0 / (n - 1))
    with np.errstate(divide="ignore", invalid="ignore"):
        z_var = np.where(var_se > 0, (var - theory) / var_se, 0.0)
        mean_se = np.sqrt(var / n)
        z_mean = np.where(mean_se > 0, mean / mean_se, 0.0)
    chi2_stat = chi2_p = float("nan")
    if theory[-1] > 0:
        chi2_stat = float((n - 1) * var[-1] / theory[-1])
        cdf = stats.chi2.cdf(chi2_stat, n - 1)
        chi2_p = float(2 * min(cdf, 1 - cdf))
    l2_T = np.array([s.l2_V_T for s in ok])
    return {"n_paths": n, "n_blowup": len(summaries) - n, "b": float(b), "sigma": sigma,
            "times": t.tolist(), "var": var.tolist(), "theory": theory.tolist(),
            "var_se": var_se.tolist(), "z_var": z_var.tolist(), "mean": mean.tolist(),
            "mean_se": mean_se.tolist(), "z_mean": z_mean.tolist(), "chi2": chi2_stat,
            "chi2_pvalue": chi2_p, "frac_small_V": float(np.mean(l2_T <= 1e-2)),
            "max_l2_V_T": float(l2_T.max())}


@dataclass
class SpeedCorrection:
    c_sigma: float
    c_inf_2: float
    integrand_decay_time: float
    quad_error_estimate: float
    decay_rate: float = float("nan")
    integral: float = 0.0
    s: np.ndarray = field(default=None, repr=False)
    integrand: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"c_sigma": self.c_sigma, "c_inf_2": self.c_inf_2,
                "integrand_decay_time": self.integrand_decay_time,
                "quad_error_estimate": self.quad_error_estimate, "decay_rate": self.decay_rate,
                "integral": self.integral}


def second_variation(problem: PathProblem, w: GridFn, h: float) -> float:
    """Central second difference of v -> a_sigma(Phi_sigma + v) along w."""
    mw, psi, model, p = problem.mw, problem.psi, problem.model, problem.noise
    c = mw.c_sigma
    ap = a_sigma(mw.phi_sigma + h * w, c, psi, model, p)
    a0 = a_sigma(mw.phi_sigma, c, psi, model, p)
    am = a_sigma(mw.phi_sigma - h * w, c, psi, model, p)
    return (ap - 2.0 * a0 + am) / (h * h)


def initial_noise_profile(problem: PathProblem) -> GridFn:
    """S(0) = g(Phi_sigma) + b(Phi_sigma) Phi_sigma'."""
    return S_Phi(problem.spec.zeros(), problem.mw.phi_sigma, problem.psi, problem.model,
                 problem.noise.cutoffs)


def speed_correction(problem: PathProblem, op: LinearizedOperator, spectral: SpectralData,
                     ds: float = 0.1, dt: float = 0.01, h_rel: float = 1e-4,
                     cutoff: float = 1e-10) -> SpeedCorrection:
    """c_inf^(2) = c_sigma + sigma^2 int_0^inf D^2 a_sigma[w(s), w(s)] ds, w(s) = S(s) S(0).

    In the proportional case (validated theta0) S(0) vanishes and
    c_inf^(2) = c_sigma is returned directly; the discrete size of S(0) is
    reported as the quadrature error estimate.
    """
    c_sigma = problem.mw.c_sigma
    sigma = problem.noise.sigma
    beta = spectral.beta_gap
    w0 = initial_noise_profile(problem)
    if problem.noise.theta0 is not None:
        return SpeedCorrection(c_sigma, c_sigma, 0.0, norm_L2(w0))
    if sigma == 0.0 or norm_L2(w0) == 0.0:
        return SpeedCorrection(c_sigma, c_sigma, 0.0, 0.0)
    s_max = 50.0 / beta
    lu, rhs = op.cn_solver(dt)
    sub = max(1, int(round(ds / dt)))
    ds = sub * dt
    x = w0.flat()
    s_list, vals, errs = [], [], []
    s = 0.0
    while True:
        w = GridFn.from_flat(op.spec, x)
        nw = norm_L2(w)
        h = h_rel / nw
        q1 = second_variation(problem, w, h)
        q2 = second_variation(problem, w, 0.5 * h)
        q = (4.0 * q2 - q1) / 3.0
        s_list.append(s)
        vals.append(q)
        errs.append(abs(q2 - q1))
        if (abs(q) < cutoff and s > 0) or s >= s_max:
            break
        for _ in range(sub):
            x = lu.solve(rhs @ x)
        s += ds
    s_arr, f = np.array(s_list), np.array(vals)
    # growth check over a window of 5 / beta
    win = int(np.ceil(5.0 / beta / ds))
    if len(f) > win and np.max(np.abs(f[win:])) > 10.0 * np.max(np.abs(f[:win])):
        raise SpectralDecayError("speed-correction integrand does not decay")
    integral = float(trapezoid(f, s_arr)) if len(f) > 1 else 0.0
    coarse = float(trapezoid(f[::2], s_arr[::2])) if len(f) > 2 else integral
    quad_err = abs(integral - coarse) / 3.0 + float(trapezoid(np.array(errs), s_arr)) if len(f) > 1 else 0.0
    mag = np.abs(f)
    thresh = 1e-3 * mag.max() if mag.max() > 0 else 0.0
    idx = np.nonzero(mag > thresh)[0]
    decay_time = float(s_arr[idx[-1]]) if idx.size else 0.0
    rate = float("nan")
    sel = (mag > max(cutoff, 1e-6 * mag.max())) & (s_arr >= 1.0)
    if sel.sum() >= 3:
        rate = float(-np.polyfit(s_arr[sel], np.log(mag[sel]), 1)[0])
    return SpeedCorrection(c_sigma, float(c_sigma + sigma ** 2 * integral), decay_time,
                           float(sigma ** 2 * quad_err), rate, integral, s_arr, f)


def linear_noise_response(op: LinearizedOperator, S0: GridFn, phi: GridFn, n_paths: int, T: float,
                          dt: float = 0.01, seed: int = 0) -> dict:
    """Simulate dV1 = L_tw V1 dt + S0 dbeta and compare Var<V1(T), phi> with Ito isometry.

    The isometry value is computed for the same time discretization, so the
    comparison is purely statistical.
    """
    lu, rhs = op.cn_solver(dt)
    n = int(round(T / dt))
    w = op.weights
    pw = phi.flat() * w
    src = lu.solve(S0.flat())
    X = np.zeros((op.size, n_paths))
    dW = np.array([brownian_increments(seed, i, n, dt) for i in range(n_paths)])
    for k in range(n):
        X = lu.solve(rhs @ X) + np.outer(src, dW[:, k])
    proj = pw @ X
    # discrete isometry: Var = dt * sum_j <M^j src, phi>^2
    y = src.copy()
    acc = 0.0
    for _ in range(n):
        acc += (pw @ y) ** 2
        y = lu.solve(rhs @ y)
    theory = dt * acc
    var = float(proj.var(ddof=1))
    se = theory * np.sqrt(2.0 / (n_paths - 1))
    return {"var": var, "theory": float(theory), "se": float(se),
            "z": float((var - theory) / se) if se > 0 else 0.0}


def expansion_check(problem: PathProblem, op: LinearizedOperator, cfg: SimConfig, n_paths: int = 8,
                    record_every: float = 0.5) -> dict:
    """Compare V with sigma V1, V1(t) = int_0^t S(t - s) S(0) dbeta_s, on common noise.

    Uses the reference stepper (slow); meant for small ensembles. Reports
    per recorded time the means of ||V||/sigma, ||V1|| and ||V - sigma V1|| / sigma^2.
    """
    sigma = problem.noise.sigma
    if sigma <= 0:
        raise ValueError("expansion check needs sigma > 0")
    S0 = initial_noise_profile(problem)
    lu, rhs = op.cn_solver(cfg.dt)
    src = lu.solve(S0.flat())
    n = cfg.n_steps
    every = max(1, int(round(record_every / cfg.dt)))
    u0 = problem.mw.phi_sigma
    spec = problem.spec
    runs = []
    for pid in range(n_paths):
        dW = brownian_increments(cfg.seed, pid, n, cfg.dt)
        st = init_path(u0, 0.0, problem)
        x1 = np.zeros(op.size)
        rows = []
        for k in range(n):
            st = step(st, problem, cfg, dW[k])
            x1 = lu.solve(rhs @ x1) + src * dW[k]
            if (k + 1) % every == 0:
                V = shift(st.U, -st.Gamma) - problem.mw.phi_sigma
                V1 = GridFn.from_flat(spec, x1)
                rows.append((st.t, norm_L2(V) / sigma, norm_L2(V1),
                             norm_L2(V - sigma * V1) / sigma ** 2))
        runs.append(rows)
    arr = np.array(runs)
    return {"times": arr[0, :, 0].tolist(), "mean_V_over_sigma": arr[:, :, 1].mean(0).tolist(),
            "mean_V1": arr[:, :, 2].mean(0).tolist(),
            "mean_remainder_ratio": arr[:, :, 3].mean(0).tolist(),
            "S0_norm": norm_L2(S0), "n_paths": n_paths}
