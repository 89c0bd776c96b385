"""Noise-modified waves (Phi_sigma, c_sigma) and the initial phase fit."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import GridFn, apply_diffusion, inner_product_L2, norm_H1, norm_L2, shift
from .iofmt import atomic_write_text, format_columns, parse_columns
from .models import ModelSpec
from .noiseterms import J_sigma, M_sigma, NoiseParams
from .profiles import LinearizedOperator, SpectralData, WaveData


class FixedPointError(RuntimeError):
    pass


class PhaseFitError(RuntimeError):
    pass


@dataclass
class ModifiedWave:
    phi_sigma: GridFn
    c_sigma: float
    sigma: float
    residual: float
    iterations: int
    history: list = field(default_factory=list)
    b_closed_form: float = None


@dataclass
class PhaseFit:
    gamma0: float
    v_gamma0: GridFn
    ip_residual: float
    iterations: int = 0
    K_ratio: float = float("nan")


class LinvSolver:
    """Bordered solver for L_tw v + Phi0' d = h with <v, psi> = 0."""

    def __init__(self, op: LinearizedOperator, psi: GridFn):
        self.op = op
        self.psi = psi
        col = op.phi0_prime.flat()[:, None]
        row = (op.weights * psi.flat())[None, :]
        big = sp.bmat([[op.matrix, sp.csr_matrix(col)], [sp.csr_matrix(row), None]], format="csc")
        self._lu = spla.splu(big)

    def __call__(self, h: GridFn):
        d = inner_product_L2(h, self.psi)
        rhs = np.concatenate([(h - d * self.op.phi0_prime).flat(), [0.0]])
        x = self._lu.solve(rhs)
        return GridFn.from_flat(self.op.spec, x[:-1]), float(d)


def apply_Linv(h: GridFn, op: LinearizedOperator, spectral: SpectralData):
    """(v, d) with d = <h, psi>, L_tw v = h - d Phi0' and <v, psi> = 0."""
    return LinvSolver(op, spectral.psi)(h)


def modified_wave_residual(phi: GridFn, c: float, psi: GridFn, model: ModelSpec,
                           p: NoiseParams) -> GridFn:
    """A Phi + J_sigma(Phi, c)."""
    return apply_diffusion(phi, model.diffusion) + J_sigma(phi, c, psi, model, p)


def solve_modified_wave(wave: WaveData, op: LinearizedOperator, spectral: SpectralData,
                        p: NoiseParams, tol: float = 1e-11, max_iter: int = 500,
                        v_init: GridFn = None, d_init: float = 0.0) -> ModifiedWave:
    """Picard iteration (v, d) <- -L^-1 M(v, d) from (0, 0).

    Stops when the update size ||dv||_H1 + |dd| drops below ``tol``. Raises
    FixedPointError after five consecutive growing updates (no contraction)
    or when ``max_iter`` is exhausted.
    """
    model = wave.model
    psi = spectral.psi
    solver = LinvSolver(op, psi)
    spec = wave.spec
    v = spec.zeros() if v_init is None else v_init.copy()
    d = float(d_init)
    history = []
    grow = 0
    for it in range(1, max_iter + 1):
        M = M_sigma(v, d, wave, op, psi, model, p)
        vn, dn = solver(M)
        vn, dn = -vn, -dn
        step = norm_H1(vn - v) + abs(dn - d)
        if not np.isfinite(step) or step > 1e6 * (history[0] + 1.0 if history else 1.0):
            raise FixedPointError(f"fixed-point iteration diverges at sigma={p.sigma}")
        history.append(step)
        grow = grow + 1 if len(history) > 1 and step > history[-2] else 0
        v, d = vn, dn
        if grow >= 5:
            raise FixedPointError(f"no contraction at sigma={p.sigma} (update {step:.3e})")
        if step <= tol:
            break
    else:
        raise FixedPointError(f"no convergence in {max_iter} iterations (update {step:.3e})")
    phi = wave.phi0 + v
    c = wave.c0 + d
    res = norm_L2(modified_wave_residual(phi, c, psi, model, p))
    return ModifiedWave(phi, float(c), p.sigma, float(res), it, history)


def explicit_modified_wave(wave: WaveData, p: NoiseParams, psi: GridFn = None) -> ModifiedWave:
    """Closed form for g(Phi0) = theta0 Phi0': Phi_sigma(xi) = Phi0(alpha xi), c = c0 / alpha.

    alpha = sqrt(1 + sigma^2 theta0^2 / (2 rho)). Also stores b(Phi_sigma) = -theta0 / alpha.
    When ``psi`` is given the profile is translated so that
    <Phi_sigma - Phi0, psi> = 0, the normalization used by the fixed-point solver.
    """
    if p.theta0 is None:
        raise ValueError("explicit modified wave needs theta0")
    model = wave.model
    alpha = np.sqrt(1.0 + p.sigma ** 2 * p.theta0 ** 2 / (2.0 * model.rho))
    xi = wave.spec.xi
    phi = resample(wave.phi0, alpha * xi)
    c = wave.c0 / alpha
    res = float("nan")
    if psi is not None:
        # pick the translate with <Phi_sigma - Phi0, psi> = 0
        base = inner_product_L2(wave.phi0, psi)
        gamma = 0.0
        for _ in range(50):
            r = inner_product_L2(phi, psi) - base
            if abs(r) < 1e-14:
                break
            gamma += r / alpha
            phi = resample(wave.phi0, alpha * (xi - gamma))
        res = norm_L2(modified_wave_residual(phi, c, psi, model, p))
    return ModifiedWave(phi, float(c), p.sigma, res, 0, [], float(-p.theta0 / alpha))


def resample(u: GridFn, points) -> GridFn:
    """Cubic interpolation of ``u`` at arbitrary points (asymptotic states outside)."""
    spec = u.spec
    x = (np.asarray(points, dtype=float) + spec.half_width) / spec.dx
    m = np.floor(x).astype(int)
    t = x - m
    N = spec.n_points
    w = [-t * (t - 1) * (t - 2) / 6, (t + 1) * (t - 1) * (t - 2) / 2,
         -(t + 1) * t * (t - 2) / 2, (t + 1) * t * (t - 1) / 6]
    out = np.zeros((len(x), spec.n_components))
    for k in range(4):
        idx = m - 1 + k
        vals = np.where((idx < 0)[:, None], u.left[None, :],
                        np.where((idx >= N)[:, None], u.right[None, :],
                                 u.values[np.clip(idx, 0, N - 1)]))
        out += w[k][:, None] * vals
    return GridFn(spec, out, u.left, u.right)


def solve_initial_phase(u0: GridFn, mw: ModifiedWave, psi: GridFn, delta0: float = 0.2,
                        tol: float = 1e-13, max_iter: int = 100) -> PhaseFit:
    """Find gamma0 with <T_{-gamma0} u0 - Phi_sigma, psi> = 0.

    Iterates gamma <- gamma - <T_{-gamma} u0 - Phi_sigma, psi>, a contraction
    when ||u0 - Phi_sigma|| is small since <Phi_sigma', psi> is close to 1.
    """
    dist = norm_L2(u0 - mw.phi_sigma)
    if dist >= delta0:
        raise PhaseFitError(f"||u0 - Phi_sigma|| = {dist:.3e} exceeds delta0 = {delta0}")
    base = inner_product_L2(mw.phi_sigma, psi)
    gamma = 0.0

    def G(gm):
        return inner_product_L2(shift(u0, -gm), psi) - base

    it = 0
    for it in range(1, max_iter + 1):
        r = G(gamma)
        v = shift(u0, -gamma) - mw.phi_sigma
        if abs(r) <= 1e-10 * norm_L2(psi) * norm_L2(v) + tol:
            break
        gamma -= r
    else:
        raise PhaseFitError(f"phase iteration did not converge (residual {r:.3e})")
    v = shift(u0, -gamma) - mw.phi_sigma
    ip = inner_product_L2(v, psi)
    ratio = (abs(gamma) + norm_L2(v)) / dist if dist > 0 else 0.0
    return PhaseFit(float(gamma), v, float(ip), it, float(ratio))


def sigma_threshold(wave: WaveData, op: LinearizedOperator, spectral: SpectralData,
                    make_params, sigmas) -> float:
    """Largest sigma in ``sigmas`` (ascending) for which the Picard iteration converges."""
    best = 0.0
    for s in sigmas:
        try:
            solve_modified_wave(wave, op, spectral, make_params(s), max_iter=300)
        except FixedPointError:
            break
        best = float(s)
    return best


def save_modified_wave(path, mw: ModifiedWave, psi: GridFn = None) -> None:
    spec = mw.phi_sigma.spec
    header = {"format": "stochwave-modwave-1", "half_width": spec.half_width, "dx": spec.dx,
              "n_components": spec.n_components, "sigma": mw.sigma, "c_sigma": mw.c_sigma,
              "residual": mw.residual, "iterations": mw.iterations,
              "left": mw.phi_sigma.left.tolist(), "right": mw.phi_sigma.right.tolist()}
    cols = [spec.xi[:, None], mw.phi_sigma.values]
    names = ["xi"] + [f"phi_{k + 1}" for k in range(spec.n_components)]
    if psi is not None:
        cols.append(psi.values)
        names += [f"psi_{k + 1}" for k in range(spec.n_components)]
    atomic_write_text(path, format_columns(header, names, np.hstack(cols)))


def load_modified_wave(path) -> ModifiedWave:
    from .grid import GridSpec
    header, names, data = parse_columns(path)
    n = int(header["n_components"])
    spec = GridSpec(float(header["half_width"]), float(header["dx"]), n)
    phi = GridFn(spec, data[:, 1:1 + n], header["left"], header["right"])
    return ModifiedWave(phi, float(header["c_sigma"]), float(header["sigma"]),
                        float(header["residual"]), int(header["iterations"]))
