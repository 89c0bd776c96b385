"""Backend selection for the path stepper.

The compiled extension ``stochwave._kernels`` is used when it imports; the
numpy fallback otherwise. ``STOCHWAVE_BACKEND=numpy`` forces the fallback.
"""
from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

try:  # pragma: no cover - depends on the build
    from . import _kernels as _ext
except ImportError:  # pragma: no cover
    _ext = None

AVAILABLE = ("cython", "numpy") if _ext is not None else ("numpy",)
BACKEND = "numpy" if (_ext is None or os.environ.get("STOCHWAVE_BACKEND") == "numpy") else "cython"

SCHEMES = {"imex_em": 0, "imex_cnab_em": 1}

RESULT_FIELDS = ("gamma_T", "supN", "exit_time", "exited", "N1", "N2", "tau", "l2_V", "h1_V",
                 "blowup", "blowup_time", "n_records")


def thomas_factors(N: int, r: float):
    """Forward-sweep coefficients for the matrix tridiag(-r, 1 + 2r, -r)."""
    c = np.empty(N)
    inv = np.empty(N)
    d = 1.0 + 2.0 * r
    inv[0] = 1.0 / d
    c[0] = -r * inv[0]
    for j in range(1, N):
        inv[j] = 1.0 / (d + r * c[j - 1])
        c[j] = -r * inv[j]
    return c, inv


class Packed:
    """Flat parameter vectors and arrays consumed by both backends."""

    def __init__(self, fp, ip, phi, psi, apsi, wts, tc, tinv):
        self.fp, self.ip = fp, ip
        self.phi, self.psi, self.apsi, self.wts = phi, psi, apsi, wts
        self.tc, self.tinv = tc, tinv


def pack_params(model, phi_sigma, c_sigma, psi, apsi, sigma, K_ip, dt, epsilon, alpha, eta,
                scheme, stop_on_exit=False) -> Packed:
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {sorted(SCHEMES)}")
    spec = phi_sigma.spec
    n = spec.n_components
    theta = 0.5 if scheme == "imex_cnab_em" else 1.0
    r = dt * model.rho / spec.dx ** 2
    lo, hi = phi_sigma.left, phi_sigma.right
    fp = np.array([dt, sigma, c_sigma, model.rho, model.a, model.varrho, model.gamma_fhn,
                   model.g_scale, epsilon, alpha, eta if np.isfinite(eta) else 1e300, K_ip,
                   spec.dx, lo[0], lo[-1] if n > 1 else 0.0, hi[0], hi[-1] if n > 1 else 0.0,
                   theta * r, (1.0 - theta) * r], dtype=float)
    ip = np.array([n, 0 if model.kind == "nagumo" else 1, model.g_power, SCHEMES[scheme],
                   int(bool(stop_on_exit))], dtype=np.int64)
    c, inv = thomas_factors(spec.n_points, theta * r)
    tc = np.ascontiguousarray(np.tile(c, (n, 1)))
    tinv = np.ascontiguousarray(np.tile(inv, (n, 1)))
    return Packed(fp, ip, np.ascontiguousarray(phi_sigma.values), np.ascontiguousarray(psi.values),
                  np.ascontiguousarray(apsi.values), np.ascontiguousarray(spec.weights), tc, tinv)


def integrate(packed: Packed, U0: np.ndarray, gamma0, dW: np.ndarray, stride: int = 1,
              backend: str = None):
    """Integrate paths sharing one initial state.

    Parameters
    ----------
    U0 : ndarray (N, n)
    gamma0 : float
    dW : ndarray (B, nsteps)
        Brownian increments, one row per path.

    Returns
    -------
    results : ndarray (B, 12), columns ``RESULT_FIELDS``
    series : list of ndarray (n_records, 7)
    U_T : ndarray (B, N, n)
    """
    backend = backend or BACKEND
    if backend not in AVAILABLE:
        raise ValueError(f"backend {backend!r} not available ({AVAILABLE})")
    dW = np.atleast_2d(np.asarray(dW, dtype=float))
    B, nsteps = dW.shape
    stride = max(1, int(stride))
    nrec_max = nsteps // stride + 2
    if backend == "cython":
        results = np.zeros((B, len(RESULT_FIELDS)))
        series, finals = [], []
        ipl = packed.ip.astype(np.int_)
        for i in range(B):
            U = np.array(U0, dtype=float, order="C", copy=True)
            buf = np.zeros((nrec_max, 7))
            out = _ext.run_path(U, float(gamma0), np.ascontiguousarray(dW[i]), packed.fp, ipl,
                                packed.phi, packed.psi, packed.apsi, packed.wts, packed.tc,
                                packed.tinv, buf, stride)
            results[i] = out
            series.append(buf[:int(out[-1])].copy())
            finals.append(U)
        return results, series, np.array(finals)
    U = np.repeat(np.asarray(U0, dtype=float)[None], B, axis=0)
    gamma = np.full(B, float(gamma0))
    res, ser = _kernels_py.run_batch(U, gamma, dW, packed.fp, packed.ip, packed.phi, packed.psi,
                                     packed.apsi, packed.wts, stride)
    series = [ser[i, :int(res[i, -1])].copy() for i in range(B)]
    return res, series, U
