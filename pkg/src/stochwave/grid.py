"""Uniform grids on a truncated line and the discrete calculus used everywhere else.

Grid functions carry their asymptotic states (the values assumed outside the
truncated domain). Profiles carry the rest states of the model; perturbations
carry zeros. The first derivative uses a 4th-order central stencil and the
diffusion operator a 3-point stencil, both with ghost values equal to the
asymptotic states.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on [-L, L].

    Parameters
    ----------
    half_width : float
        L, the half width of the truncated domain.
    dx : float
        Mesh width. Must divide 2L to within 1e-9 relative error.
    n_components : int
        Number of components of functions living on the grid.
    """

    half_width: float
    dx: float
    n_components: int = 1

    def __post_init__(self):
        if not (self.half_width > 0 and self.dx > 0):
            raise GridError("half_width and dx must be positive")
        if self.n_components < 1:
            raise GridError("n_components must be >= 1")
        m = 2.0 * self.half_width / self.dx
        if abs(m - round(m)) > 1e-9 * max(m, 1.0):
            raise GridError(f"dx={self.dx} does not divide 2L={2 * self.half_width}")
        if round(m) < 4:
            raise GridError("grid needs at least 5 points")

    @property
    def n_points(self) -> int:
        return int(round(2.0 * self.half_width / self.dx)) + 1

    @property
    def xi(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.n_points)

    @property
    def weights(self) -> np.ndarray:
        return trapezoid_weights(self)

    def zeros(self) -> "GridFn":
        return GridFn(self, np.zeros((self.n_points, self.n_components)))

    def from_callable(self, fn, left=None, right=None) -> "GridFn":
        vals = np.asarray(fn(self.xi), dtype=float)
        return GridFn(self, vals.reshape(self.n_points, -1), left, right)


@dataclass(frozen=True)
class DiffusionSpec:
    """Diffusion matrix diag(rho) with the clamp-to-rest-state boundary rule."""

    rho: tuple = (1.0,)
    boundary_rule: str = "clamp_to_rest_states"

    def __post_init__(self):
        r = tuple(float(x) for x in np.atleast_1d(self.rho))
        if any(x < 0 for x in r):
            raise GridError("diffusion coefficients must be nonnegative")
        if self.boundary_rule != "clamp_to_rest_states":
            raise GridError(f"unknown boundary rule {self.boundary_rule!r}")
        object.__setattr__(self, "rho", r)

    @property
    def rho_array(self) -> np.ndarray:
        return np.asarray(self.rho)


def _as_states(x, n):
    if x is None:
        return np.zeros(n)
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size == 1 and n > 1:
        x = np.full(n, x[0])
    if x.size != n:
        raise GridError(f"asymptotic state has {x.size} entries, expected {n}")
    return x


@dataclass(eq=False)
class GridFn:
    """Function sampled on a GridSpec.

    Attributes
    ----------
    spec : GridSpec
    values : ndarray, shape (n_points, n_components)
    left, right : ndarray, shape (n_components,)
        Values assumed for xi < -L and xi > L (rest states for profiles,
        zeros for perturbations).
    """

    spec: GridSpec
    values: np.ndarray
    left: np.ndarray = field(default=None)
    right: np.ndarray = field(default=None)

    def __post_init__(self):
        n = self.spec.n_components
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape != (self.spec.n_points, n):
            raise GridError(f"values shape {v.shape} != {(self.spec.n_points, n)}")
        if not np.all(np.isfinite(v)):
            raise GridError("grid function has non-finite values")
        self.values = v
        self.left = _as_states(self.left, n)
        self.right = _as_states(self.right, n)

    # light arithmetic; asymptotic states combine linearly
    def _coerce(self, other):
        if isinstance(other, GridFn):
            if other.spec != self.spec:
                raise GridError("grid mismatch")
            return other.values, other.left, other.right
        return other, other, other

    def __add__(self, other):
        v, l, r = self._coerce(other)
        return GridFn(self.spec, self.values + v, self.left + l, self.right + r)

    __radd__ = __add__

    def __sub__(self, other):
        v, l, r = self._coerce(other)
        return GridFn(self.spec, self.values - v, self.left - l, self.right - r)

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return GridFn(self.spec, -self.values, -self.left, -self.right)

    def __mul__(self, s):
        if isinstance(s, GridFn):
            return GridFn(self.spec, self.values * s.values, self.left * s.left,
                          self.right * s.right)
        s = float(s)
        return GridFn(self.spec, s * self.values, s * self.left, s * self.right)

    __rmul__ = __mul__

    def copy(self) -> "GridFn":
        return GridFn(self.spec, self.values.copy(), self.left.copy(), self.right.copy())

    def flat(self) -> np.ndarray:
        """Component-major flattening used by the sparse operators."""
        return self.values.T.reshape(-1).copy()

    @classmethod
    def from_flat(cls, spec: GridSpec, x, left=None, right=None) -> "GridFn":
        x = np.asarray(x, dtype=float)
        return cls(spec, x.reshape(spec.n_components, spec.n_points).T, left, right)

    def component(self, k: int) -> np.ndarray:
        return self.values[:, k]


def trapezoid_weights(spec: GridSpec) -> np.ndarray:
    w = np.full(spec.n_points, spec.dx)
    w[0] = w[-1] = 0.5 * spec.dx
    return w


def inner_product_L2(u: GridFn, v: GridFn) -> float:
    """Trapezoid-rule L2 inner product, summed over components."""
    if u.spec != v.spec:
        raise GridError("grid mismatch")
    w = trapezoid_weights(u.spec)
    return float(np.sum(w[:, None] * u.values * v.values))


def norm_L2(u: GridFn) -> float:
    return float(np.sqrt(max(inner_product_L2(u, u), 0.0)))


# 4th-order one-sided stencils for the two outermost nodes on each side
_ONE_SIDED = (
    np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0,
    np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0,
)


def derivative_one_sided(u: GridFn) -> np.ndarray:
    """First derivative with one-sided closures; ignores asymptotic states."""
    v, dx = u.values, u.spec.dx
    d = np.empty_like(v)
    d[2:-2] = (-v[4:] + 8 * v[3:-1] - 8 * v[1:-3] + v[:-4]) / (12 * dx)
    s0, s1 = _ONE_SIDED
    d[0] = s0 @ v[:5] / dx
    d[1] = s1 @ v[:5] / dx
    d[-1] = -(s0 @ v[::-1][:5]) / dx
    d[-2] = -(s1 @ v[::-1][:5]) / dx
    return d


def derivative(u: GridFn) -> GridFn:
    """4th-order central first derivative, ghosts taken from the asymptotic states.

    The result is a perturbation (zero asymptotic states).
    """
    v = u.values
    g = np.concatenate([u.left[None, :], u.left[None, :], v, u.right[None, :], u.right[None, :]])
    d = (-g[4:] + 8 * g[3:-1] - 8 * g[1:-3] + g[:-4]) / (12 * u.spec.dx)
    return GridFn(u.spec, d)


def norm_H1(u: GridFn) -> float:
    w = trapezoid_weights(u.spec)[:, None]
    d = derivative_one_sided(u)
    return float(np.sqrt(np.sum(w * (u.values ** 2 + d ** 2))))


def laplacian(u: GridFn) -> np.ndarray:
    """3-point second difference with ghosts equal to the asymptotic states."""
    v = u.values
    g = np.concatenate([u.left[None, :], v, u.right[None, :]])
    return (g[2:] - 2 * g[1:-1] + g[:-2]) / u.spec.dx ** 2


def apply_diffusion(u: GridFn, d: DiffusionSpec) -> GridFn:
    """rho * u_xixi with the clamp rule. Linear in (values, asymptotic states)."""
    rho = d.rho_array
    if rho.size == 1:
        rho = np.full(u.spec.n_components, rho[0])
    if rho.size != u.spec.n_components:
        raise GridError("diffusion spec does not match number of components")
    return GridFn(u.spec, laplacian(u) * rho[None, :])


def cubic_shift_weights(gamma: float, dx: float):
    """Offset and 4-tap Lagrange weights for evaluating u(xi_j - gamma).

    Returns ``(m, w)`` such that ``u(xi_j - gamma) ~ sum_k w[k] * u[j + m - 1 + k]``.
    """
    s = -gamma / dx
    m = int(np.floor(s))
    t = s - m
    w = np.array([
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ])
    return m, w


def shift_values(values: np.ndarray, left, right, gamma: float, dx: float) -> np.ndarray:
    """Array-level version of :func:`shift` for values of shape (N, n) or (N,)."""
    v = np.asarray(values, dtype=float)
    squeeze = v.ndim == 1
    if squeeze:
        v = v[:, None]
    N = v.shape[0]
    m, w = cubic_shift_weights(gamma, dx)
    if m == 0 and w[1] == 1.0:
        out = v.copy()
        return out[:, 0] if squeeze else out
    if abs(m) > N + 2:
        # the whole stencil lies outside the grid
        state = np.asarray(right if m > 0 else left, dtype=float)
        out = np.broadcast_to(state[None, :], v.shape).astype(float)
        return out[:, 0] if squeeze else out
    pad = abs(m) + 2
    ext = np.concatenate([np.repeat(np.asarray(left, float)[None, :], pad, 0), v,
                          np.repeat(np.asarray(right, float)[None, :], pad, 0)])
    base = pad + m - 1
    out = (w[0] * ext[base:base + N] + w[1] * ext[base + 1:base + 1 + N]
           + w[2] * ext[base + 2:base + 2 + N] + w[3] * ext[base + 3:base + 3 + N])
    return out[:, 0] if squeeze else out


def shift(u: GridFn, gamma: float) -> GridFn:
    """Translation T_gamma u(xi) = u(xi - gamma) by cubic interpolation.

    Samples outside the grid take the asymptotic states of ``u``.
    """
    vals = shift_values(u.values, u.left, u.right, float(gamma), u.spec.dx)
    return GridFn(u.spec, vals, u.left, u.right)


def sup_norm(u: GridFn) -> float:
    return float(np.max(np.abs(u.values)))
