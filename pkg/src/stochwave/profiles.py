"""Deterministic travelling waves, their linearization and the adjoint eigenfunction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import expit

from .grid import GridFn, GridSpec, apply_diffusion, derivative, inner_product_L2
from .iofmt import atomic_write_text, format_columns, parse_columns
from .models import ModelSpec


class NewtonError(RuntimeError):
    pass


class DomainError(ValueError):
    """The truncated domain is too small for the wave."""


class SpectralError(RuntimeError):
    pass


@dataclass
class WaveData:
    """A travelling wave (Phi0, c0) on a grid.

    ``phi_ref`` is the reference profile used in the phase condition and
    ``residual`` the sup norm of the discrete wave equation at (phi0, c0).
    """

    phi0: GridFn
    c0: float
    phi_ref: GridFn
    residual: float
    model: ModelSpec = None
    iterations: int = 0

    @property
    def spec(self) -> GridSpec:
        return self.phi0.spec


@dataclass
class SpectralData:
    psi: GridFn
    lambda0: float
    beta_gap: float
    M_const: float = float("nan")
    eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0))


def wave_residual(model: ModelSpec, phi: GridFn, c: float) -> GridFn:
    """c Phi' + rho Phi'' + f(Phi) on the grid."""
    r = c * derivative(phi) + apply_diffusion(phi, model.diffusion)
    return r + GridFn(phi.spec, model.f(phi.values))


def nagumo_front(spec: GridSpec, a: float, rho: float = 1.0, model: ModelSpec = None) -> WaveData:
    """Closed-form Nagumo front sampled on the grid.

    Phi0(xi) = 1 / (1 + exp(-xi / sqrt(2 rho))), c0 = sqrt(2 rho) (a - 1/2).
    The stored residual is the discrete one, so it is O(dx^2), not zero.
    """
    if not 0.0 < a < 1.0:
        raise ValueError(f"threshold a={a} must lie in (0, 1)")
    if spec.n_components != 1:
        raise ValueError("the Nagumo front is scalar")
    if model is None:
        from .models import nagumo
        model = nagumo(a, rho)
    k = 1.0 / np.sqrt(2.0 * rho)
    xi = spec.xi
    phi = GridFn(spec, 0.5 * (1.0 + np.tanh(0.5 * k * xi)), 0.0, 1.0)
    c0 = np.sqrt(2.0 * rho) * (a - 0.5)
    res = float(np.max(np.abs(wave_residual(model, phi, c0).values)))
    return WaveData(phi, float(c0), phi.copy(), res, model)


def _d1_matrix(N: int, dx: float) -> sp.csr_matrix:
    return sp.diags([1.0, -8.0, 8.0, -1.0], [-2, -1, 1, 2], shape=(N, N), format="csr") / (12.0 * dx)


def _d2_matrix(N: int, dx: float) -> sp.csr_matrix:
    return sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(N, N), format="csr") / dx ** 2


def _jacobian_blocks(model: ModelSpec, spec: GridSpec, phi: GridFn, c: float) -> sp.csr_matrix:
    N, n = spec.n_points, spec.n_components
    D1, D2 = _d1_matrix(N, spec.dx), _d2_matrix(N, spec.dx)
    rho = model.diffusion.rho_array
    J = model.df(phi.values)
    blocks = [[None] * n for _ in range(n)]
    for k in range(n):
        for l in range(n):
            B = sp.diags(J[:, k, l])
            if k == l:
                B = B + c * D1 + rho[k] * D2
            blocks[k][l] = B
    return sp.bmat(blocks, format="csr")


def solve_wave(model: ModelSpec, spec: GridSpec, guess: GridFn, c_guess: float,
               tol: float = 1e-10, max_iter: int = 50) -> WaveData:
    """Newton solve of c Phi' + rho Phi'' + f(Phi) = 0 with a phase condition.

    The phase condition <Phi - guess, guess'> = 0 pins translations. Raises
    NewtonError when the sup-norm residual does not drop below ``tol``.
    """
    lo, hi = model.rest_states
    ref = GridFn(spec, guess.values, lo, hi)
    dref = derivative(ref)
    w = np.tile(spec.weights, spec.n_components)
    dref_w = w * dref.flat()
    phi, c = ref.copy(), float(c_guess)
    res = np.inf
    for it in range(1, max_iter + 1):
        F = wave_residual(model, phi, c).flat()
        ph = float(dref_w @ (phi - ref).flat())
        res = max(np.max(np.abs(F)), abs(ph))
        if res <= tol:
            return WaveData(phi, c, ref, float(np.max(np.abs(F))), model, it - 1)
        Jm = _jacobian_blocks(model, spec, phi, c)
        col = derivative(phi).flat()[:, None]
        big = sp.bmat([[Jm, sp.csr_matrix(col)], [sp.csr_matrix(dref_w[None, :]), None]],
                      format="csc")
        try:
            step = spla.spsolve(big, -np.concatenate([F, [ph]]))
        except RuntimeError as exc:  # singular factorization
            raise NewtonError(f"singular Newton matrix at iteration {it}") from exc
        if not np.all(np.isfinite(step)):
            raise NewtonError(f"Newton step not finite at iteration {it}")
        phi = GridFn.from_flat(spec, phi.flat() + step[:-1], lo, hi)
        c += float(step[-1])
    raise NewtonError(f"Newton did not converge in {max_iter} iterations (residual {res:.3e})")


class LinearizedOperator:
    """Sparse discretization of L_tw v = rho v'' + c0 v' + Df(Phi0) v.

    Acts on perturbations (zero asymptotic states), component-major flattening.
    """

    def __init__(self, model: ModelSpec, wave: WaveData):
        self.model = model
        self.wave = wave
        self.spec = wave.spec
        self.c0 = wave.c0
        self.matrix = _jacobian_blocks(model, self.spec, wave.phi0, wave.c0).tocsr()
        self.weights = np.tile(self.spec.weights, self.spec.n_components)
        self.phi0_prime = derivative(wave.phi0)
        self._cn = {}

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def apply(self, v: GridFn) -> GridFn:
        return GridFn.from_flat(self.spec, self.matrix @ v.flat())

    def adjoint_matrix(self) -> sp.csr_matrix:
        """Adjoint with respect to the trapezoid inner product, W^-1 L^T W."""
        W = sp.diags(self.weights)
        Winv = sp.diags(1.0 / self.weights)
        return (Winv @ self.matrix.T @ W).tocsr()

    def formal_adjoint_matrix(self) -> sp.csr_matrix:
        """Discretized -c0 d/dxi + rho d2/dxi2 + Df(Phi0)^T."""
        spec = self.spec
        N, n = spec.n_points, spec.n_components
        D1, D2 = _d1_matrix(N, spec.dx), _d2_matrix(N, spec.dx)
        rho = self.model.diffusion.rho_array
        J = self.model.df(self.wave.phi0.values)
        blocks = [[None] * n for _ in range(n)]
        for k in range(n):
            for l in range(n):
                B = sp.diags(J[:, l, k])
                if k == l:
                    B = B - self.c0 * D1 + rho[k] * D2
                blocks[k][l] = B
        return sp.bmat(blocks, format="csr")

    def apply_adjoint(self, w: GridFn) -> GridFn:
        return GridFn.from_flat(self.spec, self.adjoint_matrix() @ w.flat())

    def cn_solver(self, dt: float):
        """Cached Crank-Nicolson factorization (I - dt/2 L)."""
        key = round(float(dt), 15)
        if key not in self._cn:
            I = sp.identity(self.size, format="csc")
            lhs = (I - 0.5 * dt * self.matrix).tocsc()
            rhs = (I + 0.5 * dt * self.matrix).tocsr()
            self._cn[key] = (spla.splu(lhs), rhs)
        return self._cn[key]


def linearize(model: ModelSpec, wave: WaveData) -> LinearizedOperator:
    return LinearizedOperator(model, wave)


def adjoint_eigenfunction(op: LinearizedOperator, shift_: float = 1e-9,
                          max_iter: int = 20, tol: float = 1e-13):
    """Kernel vector psi of the adjoint, normalized so <Phi0', psi> = 1.

    Inverse iteration at a tiny shift on W^-1 L^T W. Returns ``(psi, lambda0)``
    where ``lambda0`` is the Rayleigh quotient (the eigenvalue closest to 0).
    """
    A = op.adjoint_matrix()
    n = op.size
    lu = spla.splu((A - shift_ * sp.identity(n)).tocsc())
    x = op.phi0_prime.flat()
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = lu.solve(x)
        y /= np.linalg.norm(y)
        if y @ x < 0:
            y = -y
        lam = float(y @ (A @ y))
        done = np.linalg.norm(y - x) < tol
        x = y
        if done:
            break
    psi = GridFn.from_flat(op.spec, x)
    s = inner_product_L2(op.phi0_prime, psi)
    if abs(s) < 1e-12:
        raise SpectralError("adjoint kernel vector is orthogonal to Phi0'")
    return psi * (1.0 / s), lam


def leading_eigenvalues(op: LinearizedOperator, k: int = 16, sigma: float = 0.05) -> np.ndarray:
    """Eigenvalues of L_tw nearest ``sigma`` (shift-invert), sorted by real part."""
    k = min(k, op.size - 2)
    vals = spla.eigs(op.matrix.tocsc(), k=k, sigma=sigma, which="LM", return_eigenvectors=False)
    return vals[np.argsort(-vals.real)]


def propagate_linear(op: LinearizedOperator, v0: GridFn, t: float, dt: float = 0.01) -> GridFn:
    """S(t) v0 by Crank-Nicolson; dt is reduced so that t is hit exactly."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return v0.copy()
    nsteps = max(1, int(np.ceil(t / dt - 1e-12)))
    lu, rhs = op.cn_solver(t / nsteps)
    x = v0.flat()
    for _ in range(nsteps):
        x = lu.solve(rhs @ x)
    return GridFn.from_flat(op.spec, x)


def propagate_many(op: LinearizedOperator, X0: np.ndarray, times, dt: float = 0.01):
    """Propagate the columns of X0 (flat vectors) and record them at ``times``.

    Returns an array of shape (len(times),) + X0.shape. Times must be multiples
    of dt up to rounding.
    """
    times = np.asarray(times, dtype=float)
    lu, rhs = op.cn_solver(dt)
    out = np.empty((len(times),) + X0.shape)
    x = X0.copy()
    t = 0.0
    for i, tt in enumerate(times):
        n = int(round((tt - t) / dt))
        for _ in range(n):
            x = lu.solve(rhs @ x)
        t += n * dt
        out[i] = x
    return out


def spectral_project_Q(v: GridFn, psi: GridFn, phi0_prime: GridFn) -> GridFn:
    """Q v = v - <v, psi> Phi0'."""
    return v - inner_product_L2(v, psi) * phi0_prime


def random_smooth_perturbations(spec: GridSpec, count: int, rng: np.random.Generator,
                                support: float = 0.5) -> np.ndarray:
    """Random sums of Gaussian bumps centred in |xi| <= support*L; flat columns."""
    xi = spec.xi
    L = spec.half_width
    X = np.zeros((spec.n_points * spec.n_components, count))
    for j in range(count):
        vals = np.zeros((spec.n_points, spec.n_components))
        for k in range(spec.n_components):
            for _ in range(6):
                c = rng.uniform(-support * L, support * L)
                w = rng.uniform(0.5, 3.0)
                vals[:, k] += rng.normal() * np.exp(-0.5 * ((xi - c) / w) ** 2)
        X[:, j] = vals.T.reshape(-1)
    return X


def semigroup_probe(op: LinearizedOperator, psi: GridFn, beta: float, count: int = 20,
                    seed: int = 0, times=None, dt: float = 0.01):
    """Norm ratios ||S(t) Q v0|| / ||Q v0|| for random smooth v0.

    Returns ``(times, ratios)`` with ratios of shape (len(times), count).
    """
    if times is None:
        times = np.array([0.1, 0.2, 0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0])
    rng = np.random.default_rng(seed)
    spec = op.spec
    X = random_smooth_perturbations(spec, count, rng)
    w = op.weights
    pw = psi.flat() * w
    d = op.phi0_prime.flat()
    X = X - np.outer(d, pw @ X)
    n0 = np.sqrt(np.sum(w[:, None] * X ** 2, axis=0))
    Y = propagate_many(op, X, times, dt)
    norms = np.sqrt(np.sum(w[None, :, None] * Y ** 2, axis=1))
    return np.asarray(times), norms / n0[None, :]


def estimate_M_const(op: LinearizedOperator, psi: GridFn, beta: float, **kw) -> float:
    """M = max over probes of ||S(t) Q v0|| e^(beta t) / ||Q v0||."""
    times, ratios = semigroup_probe(op, psi, beta, **kw)
    return float(np.max(ratios * np.exp(beta * times)[:, None]))


def fit_decay_rates(op: LinearizedOperator, psi: GridFn, count: int = 20, seed: int = 1,
                    t_fit=(2.0, 10.0)) -> np.ndarray:
    """Least-squares slopes of -log ||S(t) Q v0|| over t in ``t_fit``."""
    times = np.linspace(t_fit[0], t_fit[1], 9)
    t, ratios = semigroup_probe(op, psi, 0.0, count=count, seed=seed, times=times)
    A = np.vstack([t, np.ones_like(t)]).T
    coef = np.linalg.lstsq(A, np.log(ratios), rcond=None)[0]
    return -coef[0]


def compute_spectral(model: ModelSpec, wave: WaveData, op: LinearizedOperator = None,
                     n_eigs: int = 16, probe: bool = True, seed: int = 0) -> SpectralData:
    """psi_tw, lambda0, spectral gap beta and semigroup constant M.

    Raises SpectralError when the zero eigenvalue is not simple/isolated or
    the rest of the computed spectrum does not lie in Re < 0.
    """
    if op is None:
        op = linearize(model, wave)
    psi, lam0 = adjoint_eigenfunction(op)
    ev = leading_eigenvalues(op, k=n_eigs)
    i0 = int(np.argmin(np.abs(ev)))
    if abs(ev[i0]) > 1e-3:
        raise SpectralError(f"no eigenvalue near 0 (closest {ev[i0]:.3e})")
    rest = np.delete(ev, i0)
    beta = float(-np.max(rest.real)) if rest.size else float("inf")
    if beta < 1e-3:
        raise SpectralError(f"eigenvalue 0 not isolated: spectral gap {beta:.3e}")
    M = estimate_M_const(op, psi, beta, seed=seed) if probe else float("nan")
    return SpectralData(psi, float(lam0), beta, M, ev)


def fhn_pulse_guess(model: ModelSpec, spec: GridSpec, t_relax: float = 600.0, dt: float = 0.1,
                    dx_relax: float = 0.5, centre: float = None):
    """Pulse guess for equal-diffusion FitzHugh-Nagumo by direct simulation.

    Excites the left end of a long lab-frame domain, lets the pulse settle,
    estimates its speed from the drift of max u over the last quarter of the
    run and resamples the profile onto ``spec`` with max u at ``centre``
    (default ``0.6 * spec.half_width``, since the tail behind the pulse is the
    slow one). Returns (profile, c).
    """
    width = max(4.0 * spec.half_width, 800.0)
    tmp = GridSpec(width / 2.0, dx_relax, 2)
    x = tmp.xi
    N = tmp.n_points
    U = np.zeros((N, 2))
    U[:, 0] = expit(x[0] + 50.0 - x)
    lu = spla.splu((sp.identity(N) - dt * model.rho * _d2_matrix(N, dx_relax)).tocsc())
    n_steps = int(round(t_relax / dt))
    mark = 3 * n_steps // 4
    pos = []
    for k in range(n_steps):
        expl = U + dt * model.f(U)
        U = np.column_stack([lu.solve(expl[:, j]) for j in range(2)])
        if k >= mark:
            pos.append(_peak_position(x, U[:, 0]))
    if np.max(U[:, 0]) < 0.5:
        raise NewtonError("excitation died out; no pulse for these parameters")
    c = (pos[-1] - pos[0]) / ((len(pos) - 1) * dt)
    centre = 0.6 * spec.half_width if centre is None else centre
    xq = spec.xi + (pos[-1] - centre)
    vals = np.column_stack([np.interp(xq, x, U[:, j], left=0.0, right=0.0) for j in range(2)])
    lo, hi = model.rest_states
    return GridFn(spec, vals, lo, hi), float(c)


def _peak_position(x, u):
    k = int(np.argmax(u))
    k = min(max(k, 1), len(u) - 2)
    den = u[k - 1] - 2.0 * u[k] + u[k + 1]
    off = 0.5 * (u[k - 1] - u[k + 1]) / den if den != 0 else 0.0
    return x[k] + off * (x[1] - x[0])


def solve_fhn_pulse(model: ModelSpec, spec: GridSpec, **kw) -> WaveData:
    """Travelling pulse of the equal-diffusion FitzHugh-Nagumo system."""
    if model.kind != "fhn":
        raise ValueError("solve_fhn_pulse needs the FitzHugh-Nagumo model")
    guess, c = fhn_pulse_guess(model, spec, **kw)
    return solve_wave(model, spec, guess, c)


def check_boundary_decay(wave: WaveData, tol: float = 1e-8) -> float:
    """Largest |Phi0'| over the two end points; raises DomainError above ``tol``."""
    d = derivative(wave.phi0).values
    edge = float(max(np.max(np.abs(d[0])), np.max(np.abs(d[-1]))))
    if edge > tol:
        raise DomainError(f"|Phi0'| = {edge:.2e} at the boundary exceeds {tol:.0e}; "
                          "enlarge the domain")
    return edge


# ---------------------------------------------------------------- file format

def save_wave(path, wave: WaveData, spectral: SpectralData = None) -> None:
    """Columns xi, phi_1..phi_n[, psi_1..psi_n] with a ``# key = value`` header."""
    spec = wave.spec
    header = {"format": "stochwave-wave-1", "half_width": spec.half_width, "dx": spec.dx,
              "n_components": spec.n_components, "c0": wave.c0, "residual": wave.residual,
              "left": wave.phi0.left.tolist(), "right": wave.phi0.right.tolist()}
    if wave.model is not None:
        header["model"] = wave.model.params()
    cols = [spec.xi[:, None], wave.phi0.values]
    names = ["xi"] + [f"phi_{k + 1}" for k in range(spec.n_components)]
    if spectral is not None:
        header.update(lambda0=spectral.lambda0, beta_gap=spectral.beta_gap,
                      M_const=spectral.M_const)
        cols.append(spectral.psi.values)
        names += [f"psi_{k + 1}" for k in range(spec.n_components)]
    atomic_write_text(path, format_columns(header, names, np.hstack(cols)))


def load_wave(path):
    """Inverse of :func:`save_wave`; returns (WaveData, SpectralData or None)."""
    from .models import ModelSpec as _MS
    header, names, data = parse_columns(path)
    n = int(header["n_components"])
    spec = GridSpec(float(header["half_width"]), float(header["dx"]), n)
    model = _MS(**header["model"]) if "model" in header else None
    phi = GridFn(spec, data[:, 1:1 + n], header["left"], header["right"])
    wave = WaveData(phi, float(header["c0"]), phi.copy(), float(header["residual"]), model)
    spectral = None
    if len(names) >= 1 + 2 * n:
        psi = GridFn(spec, data[:, 1 + n:1 + 2 * n])
        spectral = SpectralData(psi, float(header["lambda0"]), float(header["beta_gap"]),
                                float(header["M_const"]))
    return wave, spectral
