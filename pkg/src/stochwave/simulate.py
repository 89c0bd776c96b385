"""Sample paths of the stochastic reaction-diffusion system with phase tracking.

The state U solves dU = [rho U'' + f(U)] dt + sigma g(U) dbeta and the phase
Gamma solves dGamma = [c_sigma + a_sigma(U, c_sigma, T_Gamma psi)] dt
+ sigma b(U, T_Gamma psi) dbeta with the same Brownian increment. Along the
path we track V = T_{-Gamma} U - Phi_sigma, the functional N_{eps,alpha} and the
time transform tau = int kappa dt.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from . import kernels
from .grid import GridFn, apply_diffusion, inner_product_L2, norm_H1, norm_L2, shift
from .iofmt import atomic_write_text
from .models import ModelSpec
from .modwave import ModifiedWave
from .noiseterms import NoiseParams, a_sigma, b_fn, kappa_fn


class BlowUpError(RuntimeError):
    def __init__(self, t):
        super().__init__(f"non-finite state at t={t:.6g}")
        self.t = t


@dataclass(frozen=True)
class SimConfig:
    """Time stepping and stopping parameters.

    ``eta = inf`` disables the exit latch. ``stride`` is the number of steps
    between recorded rows of the time series.
    """

    dt: float = 1e-3
    T: float = 1.0
    epsilon: float = 0.0
    alpha: float = 0.0
    eta: float = float("inf")
    seed: int = 0
    scheme: str = "imex_em"
    stride: int = 10
    stop_on_exit: bool = False

    def __post_init__(self):
        if not (self.dt > 0 and self.T > 0):
            raise ValueError("dt and T must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.scheme not in kernels.SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))


@dataclass
class PathProblem:
    """Everything a path needs: model, modified wave, psi and noise parameters."""

    model: ModelSpec
    mw: ModifiedWave
    psi: GridFn
    noise: NoiseParams

    def __post_init__(self):
        self.apsi = apply_diffusion(self.psi, self.model.diffusion)

    @property
    def spec(self):
        return self.mw.phi_sigma.spec

    def pack(self, cfg: SimConfig):
        return kernels.pack_params(self.model, self.mw.phi_sigma, self.mw.c_sigma, self.psi,
                                   self.apsi, self.noise.sigma, self.noise.cutoffs.K_ip, cfg.dt,
                                   cfg.epsilon, cfg.alpha, cfg.eta, cfg.scheme, cfg.stop_on_exit)


@dataclass
class PathState:
    t: float
    U: GridFn
    Gamma: float
    N1: float
    N2: float
    tau: float
    exited: bool = False
    exit_time: float = None
    F_prev: np.ndarray = None


@dataclass
class PathSummary:
    path_id: int
    seed: int
    gamma0: float
    gamma_T: float
    supN: float
    exit_time: float
    exited: bool
    N1_T: float
    N2_T: float
    tau_T: float
    l2_V_T: float
    h1_V_T: float
    blowup: bool = False
    blowup_time: float = None
    series: np.ndarray = field(default=None, repr=False)

    def record(self) -> dict:
        return {"path_id": self.path_id, "seed": self.seed, "exit_time": self.exit_time,
                "exited": self.exited, "supN": self.supN, "gammaT": self.gamma_T,
                "gamma0": self.gamma0, "tau_T": self.tau_T, "l2_V_T": self.l2_V_T,
                "blowup": self.blowup}


SERIES_COLUMNS = ("t", "Gamma", "N1", "N2", "tau_Phi", "l2_V", "h1_V")


def brownian_increments(seed: int, path_id: int, n_steps: int, dt: float) -> np.ndarray:
    """Increments for one path from a Philox stream keyed by seed + path_id."""
    gen = np.random.Generator(np.random.Philox(key=int(seed) + int(path_id)))
    return np.sqrt(dt) * gen.standard_normal(n_steps)


def init_path(u0: GridFn, gamma0: float, problem: PathProblem) -> PathState:
    """State at t = 0 with N1 = ||V(0)||^2 and N2 = 0."""
    v = shift(u0, -gamma0) - problem.mw.phi_sigma
    return PathState(0.0, u0.copy(), float(gamma0), norm_L2(v) ** 2, 0.0, 0.0)


def _tridiag_bands(N: int, r: float) -> np.ndarray:
    ab = np.zeros((3, N))
    ab[0, 1:] = -r
    ab[1, :] = 1.0 + 2.0 * r
    ab[2, :-1] = -r
    return ab


def step(state: PathState, problem: PathProblem, cfg: SimConfig, dW: float) -> PathState:
    """One step of the coupled system, evaluating b and a_sigma against T_Gamma psi.

    Reference implementation (slow, literal); the batch kernels use the
    equivalent co-moving formulation.
    """
    model, p = problem.model, problem.noise
    U, gam, t, dt = state.U, state.Gamma, state.t, cfg.dt
    psi_s = shift(problem.psi, gam)
    b = b_fn(U, psi_s, model, p.cutoffs)
    kappa = kappa_fn(U, psi_s, model, p)
    a = a_sigma(U, problem.mw.c_sigma, psi_s, model, p)

    v = shift(U, -gam) - problem.mw.phi_sigma
    ea = np.exp(cfg.alpha * t)
    h1 = norm_H1(v) ** 2
    N2 = np.exp(-cfg.epsilon * dt) * state.N2 + dt * ea * h1
    tau = state.tau + kappa * dt
    gam_new = gam + (problem.mw.c_sigma + a) * dt + p.sigma * b * dW

    spec = U.spec
    theta = 0.5 if cfg.scheme == "imex_cnab_em" else 1.0
    r = dt * model.rho / spec.dx ** 2
    F = model.f(U.values)
    react = F if (state.F_prev is None or theta == 1.0) else 1.5 * F - 0.5 * state.F_prev
    lap = apply_diffusion(U, model.diffusion).values * spec.dx ** 2 / model.rho
    rhs = U.values + dt * react + p.sigma * model.g(U.values) * dW + (1 - theta) * r * lap
    rhs[0] += theta * r * U.left
    rhs[-1] += theta * r * U.right
    new = solve_banded((1, 1), _tridiag_bands(spec.n_points, theta * r), rhs)
    if not (np.all(np.isfinite(new)) and np.isfinite(gam_new)):
        raise BlowUpError(t + dt)
    U_new = GridFn(spec, new, U.left, U.right)
    v_new = shift(U_new, -gam_new) - problem.mw.phi_sigma
    N1 = np.exp(cfg.alpha * (t + dt)) * norm_L2(v_new) ** 2
    out = PathState(t + dt, U_new, float(gam_new), float(N1), float(N2), float(tau),
                    state.exited, state.exit_time, F)
    if not out.exited and N1 + N2 > cfg.eta:
        out.exited, out.exit_time = True, out.t
    return out


def run_paths(u0: GridFn, gamma0: float, problem: PathProblem, cfg: SimConfig, path_ids,
              backend: str = None, keep_series: bool = True, return_states: bool = False):
    """Run the given path ids (seed stream cfg.seed + id) and summarize each."""
    path_ids = list(path_ids)
    n = cfg.n_steps
    dW = np.array([brownian_increments(cfg.seed, i, n, cfg.dt) for i in path_ids]).reshape(len(path_ids), n)
    packed = problem.pack(cfg)
    res, series, U_T = kernels.integrate(packed, u0.values, gamma0, dW, cfg.stride, backend)
    out = []
    for k, pid in enumerate(path_ids):
        r = dict(zip(kernels.RESULT_FIELDS, res[k]))
        exited = bool(r["exited"])
        out.append(PathSummary(
            path_id=int(pid), seed=int(cfg.seed) + int(pid), gamma0=float(gamma0),
            gamma_T=float(r["gamma_T"]), supN=float(r["supN"]),
            exit_time=float(r["exit_time"]) if exited else float(cfg.T), exited=exited,
            N1_T=float(r["N1"]), N2_T=float(r["N2"]), tau_T=float(r["tau"]),
            l2_V_T=float(r["l2_V"]), h1_V_T=float(r["h1_V"]), blowup=bool(r["blowup"]),
            blowup_time=float(r["blowup_time"]) if r["blowup"] else None,
            series=series[k] if keep_series else None))
    if return_states:
        return out, U_T
    return out


def run_path(u0: GridFn, gamma0: float, problem: PathProblem, cfg: SimConfig, path_id: int = 0,
             backend: str = None) -> PathSummary:
    """Single path; raises BlowUpError if the state stops being finite."""
    s = run_paths(u0, gamma0, problem, cfg, [path_id], backend)[0]
    if s.blowup:
        raise BlowUpError(s.blowup_time)
    return s


def time_transform_inverse(t_samples, tau_samples, tau_query):
    """Invert the increasing map t -> tau by piecewise-linear interpolation."""
    tau_samples = np.asarray(tau_samples, dtype=float)
    if np.any(np.diff(tau_samples) <= 0):
        raise ValueError("tau samples must be strictly increasing")
    return np.interp(tau_query, tau_samples, np.asarray(t_samples, dtype=float))


def series_csv(series: np.ndarray) -> str:
    buf = io.StringIO()
    buf.write(",".join(SERIES_COLUMNS) + "\n")
    np.savetxt(buf, series, delimiter=",", fmt="%.17g")
    return buf.getvalue()


def write_series_csv(path, series: np.ndarray) -> None:
    atomic_write_text(path, series_csv(series))


def phase_projection(U: GridFn, gamma: float, problem: PathProblem) -> float:
    """<V, psi> with V = T_{-gamma} U - Phi_sigma."""
    v = shift(U, -gamma) - problem.mw.phi_sigma
    return inner_product_L2(v, problem.psi)


def dt_halving_study(u0: GridFn, gamma0: float, problem: PathProblem, cfg: SimConfig,
                     levels: int = 4, backend: str = None) -> dict:
    """Deterministic (noise-free) convergence in dt.

    Runs ``levels`` step sizes dt, dt/2, ... with zero Brownian increments and
    measures successive differences e_k = |Gamma_k(T) - Gamma_{k+1}(T)| +
    ||V_k(T) - V_{k+1}(T)||. The observed order is log2(e_k / e_{k+1}).
    """
    if levels < 3:
        raise ValueError("need at least three levels")
    gam, Vs, dts = [], [], []
    for k in range(levels):
        dt = cfg.dt / 2 ** k
        c = SimConfig(dt=dt, T=cfg.T, epsilon=cfg.epsilon, alpha=cfg.alpha, seed=cfg.seed,
                      scheme=cfg.scheme, stride=max(1, cfg.n_steps * 2 ** k))
        packed = problem.pack(c)
        res, _, U_T = kernels.integrate(packed, u0.values, gamma0, np.zeros((1, c.n_steps)),
                                        c.stride, backend)
        g = float(res[0, 0])
        U = GridFn(u0.spec, U_T[0], u0.left, u0.right)
        gam.append(g)
        Vs.append(shift(U, -g) - problem.mw.phi_sigma)
        dts.append(dt)
    errs = [abs(gam[k] - gam[k + 1]) + norm_L2(Vs[k] - Vs[k + 1]) for k in range(levels - 1)]
    orders = [float(np.log2(errs[k] / errs[k + 1])) if errs[k + 1] > 0 else float("inf")
              for k in range(levels - 2)]
    return {"dt": dts, "gamma_T": gam, "differences": errs, "orders": orders}
