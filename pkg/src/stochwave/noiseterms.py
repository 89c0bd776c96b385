"""Phase-noise coupling b, the speed functional a_sigma and the residual maps.

All functionals take the unshifted adjoint eigenfunction ``psi``; evaluation
against a translated psi is done by translating the state instead.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (GridFn, apply_diffusion, derivative, inner_product_L2, norm_L2)
from .models import ModelSpec
from .profiles import LinearizedOperator, SpectralData, WaveData


class NoiseParamError(ValueError):
    pass


def _hermite5(s, h, p0, d0, p1, d1):
    """Quintic Hermite on [0, h] with zero second derivatives at both ends."""
    t = s / h
    h00 = 1 - 10 * t ** 3 + 15 * t ** 4 - 6 * t ** 5
    h10 = t - 6 * t ** 3 + 8 * t ** 4 - 3 * t ** 5
    h01 = 10 * t ** 3 - 15 * t ** 4 + 6 * t ** 5
    h11 = -4 * t ** 3 + 7 * t ** 4 - 3 * t ** 5
    return p0 * h00 + h * d0 * h10 + p1 * h01 + h * d1 * h11


@dataclass(frozen=True)
class CutoffSpec:
    """Smooth cut-offs chi_low and chi_high.

    chi_low(x) = 1/4 for x <= 1/4 and x for x >= 1/2; chi_high(x) = x for
    |x| <= K_ip and sign(x)(K_ip + 1) for |x| >= K_ip + 1. Both are C2 with
    quintic Hermite seams.
    """

    K_ip: float

    def __post_init__(self):
        if not self.K_ip > 0:
            raise NoiseParamError("K_ip must be positive")

    @property
    def K_b(self) -> float:
        return 4.0 * (self.K_ip + 1.0)

    def chi_low(self, x):
        x = np.asarray(x, dtype=float)
        mid = _hermite5(x - 0.25, 0.25, 0.25, 0.0, 0.5, 1.0)
        out = np.where(x <= 0.25, 0.25, np.where(x >= 0.5, x, mid))
        return out if out.ndim else float(out)

    def chi_high(self, x):
        x = np.asarray(x, dtype=float)
        K = self.K_ip
        ax = np.abs(x)
        mid = _hermite5(ax - K, 1.0, K, 1.0, K + 1.0, 0.0)
        out = np.sign(x) * np.where(ax <= K, ax, np.where(ax >= K + 1.0, K + 1.0, mid))
        return out if out.ndim else float(out)


def compute_K_ip(model: ModelSpec, wave: WaveData, psi: GridFn) -> float:
    """K_ip = [ ||g(Phi0)|| + 2 K_g ] ||psi||."""
    g0 = GridFn(wave.spec, model.g(wave.phi0.values))
    return (norm_L2(g0) + 2.0 * model.K_g()) * norm_L2(psi)


def make_cutoffs(model: ModelSpec, wave: WaveData, psi: GridFn) -> CutoffSpec:
    return CutoffSpec(compute_K_ip(model, wave, psi))


def fit_theta0(model: ModelSpec, wave: WaveData):
    """Least-squares ratio theta with g(Phi0) ~ theta Phi0'; returns (theta, L2 misfit)."""
    g0 = GridFn(wave.spec, model.g(wave.phi0.values))
    d = derivative(wave.phi0)
    den = inner_product_L2(d, d)
    theta = inner_product_L2(g0, d) / den
    return float(theta), norm_L2(g0 - theta * d)


@dataclass(frozen=True)
class NoiseParams:
    """Noise strength, cut-offs and (for the proportional case) theta0."""

    sigma: float
    cutoffs: CutoffSpec
    theta0: float = None

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise NoiseParamError("sigma must be a finite nonnegative number")


def theta0_tolerance(dx: float) -> float:
    """Allowed ||g(Phi0) - theta0 Phi0'||; the dx^2 part is the discretization floor."""
    return 1e-6 + 1e-2 * dx ** 2


def make_noise_params(model: ModelSpec, wave: WaveData, spectral: SpectralData, sigma: float,
                      special_case: bool = False) -> NoiseParams:
    """Assemble NoiseParams. With ``special_case`` theta0 is fitted and validated."""
    cut = make_cutoffs(model, wave, spectral.psi)
    theta = None
    if special_case:
        theta, err = fit_theta0(model, wave)
        if err > theta0_tolerance(wave.spec.dx):
            raise NoiseParamError(f"g(Phi0) is not proportional to Phi0' (misfit {err:.3e})")
    return NoiseParams(float(sigma), cut, theta)


def _gfn(model, u: GridFn) -> GridFn:
    return GridFn(u.spec, model.g(u.values), model.g(u.left), model.g(u.right))


def phase_inner_products(u: GridFn, psi: GridFn, model: ModelSpec):
    """(<u', psi>, <g(u), psi>)."""
    return inner_product_L2(derivative(u), psi), inner_product_L2(_gfn(model, u), psi)


def b_fn(u: GridFn, psi: GridFn, model: ModelSpec, cut: CutoffSpec) -> float:
    """b(u, psi) = -chi_high(<g(u), psi>) / chi_low(<u', psi>)."""
    p1, p2 = phase_inner_products(u, psi, model)
    return -cut.chi_high(p2) / cut.chi_low(p1)


def kappa_fn(u: GridFn, psi: GridFn, model: ModelSpec, p: NoiseParams) -> float:
    b = b_fn(u, psi, model, p.cutoffs)
    return 1.0 + p.sigma ** 2 * b ** 2 / (2.0 * model.rho)


def nu_fn(u: GridFn, psi: GridFn, model: ModelSpec, p: NoiseParams, order: float) -> float:
    """nu^(order) = kappa^order - 1."""
    return kappa_fn(u, psi, model, p) ** order - 1.0


def J_sigma(u: GridFn, c: float, psi: GridFn, model: ModelSpec, p: NoiseParams) -> GridFn:
    """kappa^-1 [ f(u) + c u' + sigma^2 b (g(u))' ]."""
    b = b_fn(u, psi, model, p.cutoffs)
    kappa = 1.0 + p.sigma ** 2 * b ** 2 / (2.0 * model.rho)
    out = GridFn(u.spec, model.f(u.values)) + c * derivative(u)
    if p.sigma > 0:
        out = out + (p.sigma ** 2 * b) * derivative(_gfn(model, u))
    return out * (1.0 / kappa)


def a_sigma(u: GridFn, c: float, psi: GridFn, model: ModelSpec, p: NoiseParams) -> float:
    """-kappa chi_low(<u', psi>)^-1 [ <u, A* psi> + <J_sigma(u, c), psi> ].

    The first pairing is evaluated as <A u, psi> on the grid. With trapezoid
    weights and ghost values the discrete A is not exactly self-adjoint, and
    this ordering is the one that makes <R_sigma, psi> cancel identically.
    """
    cut = p.cutoffs
    p1, p2 = phase_inner_products(u, psi, model)
    b = -cut.chi_high(p2) / cut.chi_low(p1)
    kappa = 1.0 + p.sigma ** 2 * b ** 2 / (2.0 * model.rho)
    J = GridFn(u.spec, model.f(u.values)) + c * derivative(u)
    if p.sigma > 0:
        J = J + (p.sigma ** 2 * b) * derivative(_gfn(model, u))
    ip = inner_product_L2(apply_diffusion(u, model.diffusion), psi) + inner_product_L2(J, psi) / kappa
    return -kappa / cut.chi_low(p1) * ip


def R_sigma(v: GridFn, phi: GridFn, c: float, psi: GridFn, model: ModelSpec,
            p: NoiseParams) -> GridFn:
    """kappa A(Phi+v) + f(Phi+v) + sigma^2 b (g(Phi+v))' + [c + a_sigma] (Phi+v)'."""
    u = phi + v
    b = b_fn(u, psi, model, p.cutoffs)
    kappa = 1.0 + p.sigma ** 2 * b ** 2 / (2.0 * model.rho)
    a = a_sigma(u, c, psi, model, p)
    out = kappa * apply_diffusion(u, model.diffusion) + GridFn(u.spec, model.f(u.values))
    out = out + (p.sigma ** 2 * b) * derivative(_gfn(model, u))
    return out + (c + a) * derivative(u)


def S_Phi(v: GridFn, phi: GridFn, psi: GridFn, model: ModelSpec, cut: CutoffSpec) -> GridFn:
    """g(Phi+v) + b(Phi+v, psi) (Phi+v)'."""
    u = phi + v
    return GridFn(u.spec, model.g(u.values)) + b_fn(u, psi, model, cut) * derivative(u)


def Rbar_sigma(v: GridFn, phi: GridFn, c: float, op: LinearizedOperator, psi: GridFn,
               model: ModelSpec, p: NoiseParams) -> GridFn:
    """kappa^-1 R_sigma(v) - L_tw v."""
    u = phi + v
    kappa = kappa_fn(u, psi, model, p)
    return R_sigma(v, phi, c, psi, model, p) * (1.0 / kappa) - op.apply(v)


def Sbar_sigma(v: GridFn, phi: GridFn, psi: GridFn, model: ModelSpec, p: NoiseParams) -> GridFn:
    """kappa^-1/2 S_Phi(v)."""
    kappa = kappa_fn(phi + v, psi, model, p)
    return S_Phi(v, phi, psi, model, p.cutoffs) * (kappa ** -0.5)


def M_sigma(v: GridFn, d: float, wave: WaveData, op: LinearizedOperator, psi: GridFn,
            model: ModelSpec, p: NoiseParams) -> GridFn:
    """J_sigma(Phi0+v, c0+d) - J_0(Phi0, c0) - d Phi0' + [A - L_tw] v."""
    phi0, c0 = wave.phi0, wave.c0
    p0 = NoiseParams(0.0, p.cutoffs)
    out = J_sigma(phi0 + v, c0 + d, psi, model, p) - J_sigma(phi0, c0, psi, model, p0)
    out = out - d * op.phi0_prime
    return out + apply_diffusion(v, model.diffusion) - op.apply(v)


def nu_bound(model: ModelSpec, p: NoiseParams) -> float:
    """sigma^2 K_b^2 / (2 rho), an upper bound for |nu^(theta)| with theta in {1/2, 1}."""
    return p.sigma ** 2 * p.cutoffs.K_b ** 2 / (2.0 * model.rho)
