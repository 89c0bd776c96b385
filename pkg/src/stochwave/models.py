"""Reaction terms, noise shapes and the model registry."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import DiffusionSpec


class ModelError(ValueError):
    pass


def smooth_cutoff(u):
    """1 on |u| <= 2, 0 on |u| >= 3, quintic smoothstep in between (C2)."""
    t = np.clip(np.abs(u) - 2.0, 0.0, 1.0)
    return 1.0 - t ** 3 * (10.0 - 15.0 * t + 6.0 * t ** 2)


def smooth_cutoff_prime(u):
    au = np.abs(u)
    t = np.clip(au - 2.0, 0.0, 1.0)
    dt = -30.0 * t ** 2 * (1.0 - t) ** 2
    return np.where((au > 2.0) & (au < 3.0), dt * np.sign(u), 0.0)


NOISE_SHAPES = ("nagumo_paper", "proportional", "nagumo_quadratic", "fhn_paper")
MODEL_KINDS = ("nagumo", "fhn")


@dataclass(frozen=True)
class ModelSpec:
    """Reaction-diffusion model with a multiplicative noise shape.

    Parameters
    ----------
    kind : {'nagumo', 'fhn'}
    a : float
        Nagumo threshold, 0 < a < 1.
    rho : float
        Diffusion coefficient (equal for both FHN components).
    varrho, gamma_fhn : float
        FitzHugh-Nagumo recovery rate and coupling (ignored for Nagumo).
    noise : str
        One of ``NOISE_SHAPES``. Nagumo shapes are s * chi(u) * u**p * (1 - u);
        ``proportional`` picks s so that g(Phi0) = theta * Phi0'.
    theta : float
        Target proportionality constant for ``noise='proportional'``.
    """

    kind: str = "nagumo"
    a: float = 0.3
    rho: float = 1.0
    varrho: float = 0.002
    gamma_fhn: float = 1.0
    noise: str = "nagumo_paper"
    theta: float = 1.0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ModelError(f"unknown model {self.kind!r}")
        if not (0.0 < self.a < 1.0):
            raise ModelError(f"threshold a={self.a} must lie in (0, 1)")
        if not self.rho > 0:
            raise ModelError("rho must be positive")
        if self.noise not in NOISE_SHAPES:
            raise ModelError(f"unknown noise shape {self.noise!r}")
        if self.kind == "fhn":
            if self.noise != "fhn_paper":
                raise ModelError("FitzHugh-Nagumo supports only noise='fhn_paper'")
            if not (self.varrho > 0 and self.gamma_fhn > 0):
                raise ModelError("varrho and gamma_fhn must be positive")
        elif self.noise == "fhn_paper":
            raise ModelError("noise 'fhn_paper' needs the FitzHugh-Nagumo model")

    @property
    def n_components(self) -> int:
        return 1 if self.kind == "nagumo" else 2

    @property
    def diffusion(self) -> DiffusionSpec:
        return DiffusionSpec((self.rho,) * self.n_components)

    @property
    def rest_states(self):
        n = self.n_components
        if self.kind == "nagumo":
            return np.zeros(1), np.ones(1)
        return np.zeros(n), np.zeros(n)

    # Nagumo-type noise: s * chi(u) * u**p * (1 - u)
    @property
    def g_scale(self) -> float:
        if self.noise == "proportional":
            return self.theta / np.sqrt(2.0 * self.rho)
        if self.noise == "nagumo_quadratic":
            return 2.0
        return 1.0

    @property
    def g_power(self) -> int:
        return 2 if self.noise == "nagumo_quadratic" else 1

    def f(self, U: np.ndarray) -> np.ndarray:
        U = np.asarray(U, dtype=float)
        u = U[..., 0]
        cubic = u * (1.0 - u) * (u - self.a)
        if self.kind == "nagumo":
            return cubic[..., None]
        v = U[..., 1]
        return np.stack([cubic - v, self.varrho * (u - self.gamma_fhn * v)], axis=-1)

    def df(self, U: np.ndarray) -> np.ndarray:
        """Jacobian of f, shape (..., n, n)."""
        U = np.asarray(U, dtype=float)
        u = U[..., 0]
        dc = -3.0 * u ** 2 + 2.0 * (1.0 + self.a) * u - self.a
        if self.kind == "nagumo":
            return dc[..., None, None]
        J = np.zeros(U.shape + (2,))
        J[..., 0, 0] = dc
        J[..., 0, 1] = -1.0
        J[..., 1, 0] = self.varrho
        J[..., 1, 1] = -self.varrho * self.gamma_fhn
        return J

    def _g1(self, u):
        s, p = self.g_scale, self.g_power
        return s * smooth_cutoff(u) * u ** p * (1.0 - u)

    def _g1_prime(self, u):
        s, p = self.g_scale, self.g_power
        poly = u ** p * (1.0 - u)
        dpoly = p * u ** (p - 1) * (1.0 - u) - u ** p
        return s * (smooth_cutoff_prime(u) * poly + smooth_cutoff(u) * dpoly)

    def g(self, U: np.ndarray) -> np.ndarray:
        U = np.asarray(U, dtype=float)
        g1 = self._g1(U[..., 0])
        if self.kind == "nagumo":
            return g1[..., None]
        return np.stack([g1, U[..., 0] - self.gamma_fhn * U[..., 1]], axis=-1)

    def dg(self, U: np.ndarray) -> np.ndarray:
        U = np.asarray(U, dtype=float)
        d1 = self._g1_prime(U[..., 0])
        if self.kind == "nagumo":
            return d1[..., None, None]
        J = np.zeros(U.shape + (2,))
        J[..., 0, 0] = d1
        J[..., 1, 0] = 1.0
        J[..., 1, 1] = -self.gamma_fhn
        return J

    def K_g(self) -> float:
        """sup of the operator norm of Dg over |U| <= 3 (sampled)."""
        u = np.linspace(-3.0, 3.0, 6001)
        if self.kind == "nagumo":
            return float(np.max(np.abs(self._g1_prime(u))))
        J = self.dg(np.stack([u, np.zeros_like(u)], axis=-1))
        return float(np.max(np.linalg.norm(J, ord=2, axis=(-2, -1))))

    def check_noise_vanishes(self, tol: float = 1e-14) -> None:
        lo, hi = self.rest_states
        if np.max(np.abs(self.g(lo))) > tol or np.max(np.abs(self.g(hi))) > tol:
            raise ModelError("noise does not vanish at the rest states")

    def params(self) -> dict:
        return dict(kind=self.kind, a=self.a, rho=self.rho, varrho=self.varrho,
                    gamma_fhn=self.gamma_fhn, noise=self.noise, theta=self.theta)


def nagumo(a: float = 0.3, rho: float = 1.0, noise: str = "nagumo_paper", theta: float = 1.0):
    return ModelSpec("nagumo", a=a, rho=rho, noise=noise, theta=theta)


def fhn(a: float = 0.1, rho: float = 1.0, varrho: float = 0.002, gamma_fhn: float = 1.0):
    return ModelSpec("fhn", a=a, rho=rho, varrho=varrho, gamma_fhn=gamma_fhn, noise="fhn_paper")
