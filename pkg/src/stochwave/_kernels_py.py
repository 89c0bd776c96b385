"""Numpy fallback for the compiled path stepper, vectorized over a batch of paths.

Implements exactly the step of ``_kernels.pyx``; used when the extension is
not built and as a cross-check for it.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded

(P_DT, P_SIGMA, P_C, P_RHO, P_A, P_VARRHO, P_GFHN, P_GSCALE, P_EPS, P_ALPHA, P_ETA,
 P_KIP, P_DX, P_L0, P_L1, P_R0, P_R1, P_RIMP, P_REXP) = range(19)
I_NCOMP, I_MODEL, I_GPOW, I_SCHEME, I_STOP = range(5)


def _chi(u):
    t = np.clip(np.abs(u) - 2.0, 0.0, 1.0)
    return 1.0 - t ** 3 * (10.0 - 15.0 * t + 6.0 * t ** 2)


def _herm(s, h, p0, d0, p1, d1):
    t = s / h
    t3 = t ** 3
    t4 = t3 * t
    t5 = t4 * t
    return (p0 * (1 - 10 * t3 + 15 * t4 - 6 * t5) + h * d0 * (t - 6 * t3 + 8 * t4 - 3 * t5)
            + p1 * (10 * t3 - 15 * t4 + 6 * t5) + h * d1 * (-4 * t3 + 7 * t4 - 3 * t5))


def _chi_low(x):
    return np.where(x <= 0.25, 0.25,
                    np.where(x >= 0.5, x, _herm(x - 0.25, 0.25, 0.25, 0.0, 0.5, 1.0)))


def _chi_high(x, K):
    ax = np.abs(x)
    y = np.where(ax <= K, ax, np.where(ax >= K + 1.0, K + 1.0,
                                       _herm(ax - K, 1.0, K, 1.0, K + 1.0, 0.0)))
    return np.where(x >= 0, y, -y)


def _g(U, gs, gpow, gf):
    u = U[..., 0]
    base = u * (1.0 - u)
    if gpow == 2:
        base = base * u
    g1 = gs * _chi(u) * base
    if U.shape[-1] == 1:
        return g1[..., None]
    return np.stack([g1, u - gf * U[..., 1]], axis=-1)


def _f(U, model, a, varrho, gf):
    u = U[..., 0]
    cubic = u * (1.0 - u) * (u - a)
    if model == 0:
        return cubic[..., None]
    v = U[..., 1]
    return np.stack([cubic - v, varrho * (u - gf * v)], axis=-1)


def _d1_ghost(P, dx):
    """Central 4th-order derivative of an array padded with two ghost rows per side."""
    return (-P[:, 4:] + 8.0 * P[:, 3:-1] - 8.0 * P[:, 1:-3] + P[:, :-4]) / (12.0 * dx)


def _d1_one_sided(V, dx):
    d = np.empty_like(V)
    d[:, 2:-2] = (-V[:, 4:] + 8.0 * V[:, 3:-1] - 8.0 * V[:, 1:-3] + V[:, :-4]) / (12.0 * dx)
    d[:, 0] = (-25 * V[:, 0] + 48 * V[:, 1] - 36 * V[:, 2] + 16 * V[:, 3] - 3 * V[:, 4]) / (12 * dx)
    d[:, 1] = (-3 * V[:, 0] - 10 * V[:, 1] + 18 * V[:, 2] - 6 * V[:, 3] + V[:, 4]) / (12 * dx)
    d[:, -1] = (25 * V[:, -1] - 48 * V[:, -2] + 36 * V[:, -3] - 16 * V[:, -4] + 3 * V[:, -5]) / (12 * dx)
    d[:, -2] = (3 * V[:, -1] + 10 * V[:, -2] - 18 * V[:, -3] + 6 * V[:, -4] - V[:, -5]) / (12 * dx)
    return d


def _pad2(X, lo, hi):
    B, N, n = X.shape
    L = np.broadcast_to(lo[None, None, :], (B, 2, n))
    R = np.broadcast_to(hi[None, None, :], (B, 2, n))
    return np.concatenate([L, X, R], axis=1)


def run_batch(U, gamma, dW, fp, ip, phi, psi, apsi, wts, stride):
    """Integrate a batch of paths in place.

    Parameters
    ----------
    U : ndarray (B, N, n)
    gamma : ndarray (B,)
    dW : ndarray (B, nsteps)

    Returns
    -------
    results : ndarray (B, 12)
        Same scalar layout as the compiled ``run_path``.
    series : ndarray (B, nrec_max, 7)
    """
    B, N, n = U.shape
    nsteps = dW.shape[1]
    dt, sigma, c, rho = fp[P_DT], fp[P_SIGMA], fp[P_C], fp[P_RHO]
    a, varrho, gf, gs = fp[P_A], fp[P_VARRHO], fp[P_GFHN], fp[P_GSCALE]
    eps, alpha, eta, K = fp[P_EPS], fp[P_ALPHA], fp[P_ETA], fp[P_KIP]
    dx, rimp, rexp = fp[P_DX], fp[P_RIMP], fp[P_REXP]
    model, gpow, scheme, stop = int(ip[I_MODEL]), int(ip[I_GPOW]), int(ip[I_SCHEME]), int(ip[I_STOP])
    lo = np.array([fp[P_L0], fp[P_L1]])[:n]
    hi = np.array([fp[P_R0], fp[P_R1]])[:n]
    glo = _g(lo[None, :], gs, gpow, gf)[0]
    ghi = _g(hi[None, :], gs, gpow, gf)[0]
    sig2 = sigma * sigma
    decay = np.exp(-eps * dt)
    w = wts[None, :, None]
    ab = np.zeros((3, N))
    ab[0, 1:] = -rimp
    ab[1, :] = 1.0 + 2.0 * rimp
    ab[2, :-1] = -rimp

    nrec_max = nsteps // stride + 2
    series = np.zeros((B, nrec_max, 7))
    nrec = np.zeros(B, dtype=int)
    N1 = np.zeros(B)
    N2 = np.zeros(B)
    tau_x = np.zeros(B)
    t_now = np.zeros(B)
    supN = np.zeros(B)
    exit_time = np.full(B, -1.0)
    exited = np.zeros(B, dtype=bool)
    blowup = np.zeros(B, dtype=bool)
    blow_t = np.full(B, -1.0)
    active = np.ones(B, dtype=bool)
    l2 = np.zeros(B)
    h1 = np.zeros(B)
    Fprev = np.zeros_like(U)
    rows = np.arange(N)
    bidx = np.arange(B)

    for step in range(nsteps + 1):
        t = step * dt
        t_now = np.where(active, t, t_now)
        s = gamma / dx
        m = np.floor(s)
        th = s - m
        m = m.astype(np.int64)
        wq = [-th * (th - 1.0) * (th - 2.0) / 6.0, (th + 1.0) * (th - 1.0) * (th - 2.0) / 2.0,
              -(th + 1.0) * th * (th - 2.0) / 2.0, (th + 1.0) * th * (th - 1.0) / 6.0]
        ext = np.concatenate([np.broadcast_to(lo[None, None, :], (B, 1, n)), U,
                              np.broadcast_to(hi[None, None, :], (B, 1, n))], axis=1)
        W = np.zeros_like(U)
        for q in range(4):
            idx = np.clip(rows[None, :] + m[:, None] - 1 + q + 1, 0, N + 1)
            W += wq[q][:, None, None] * ext[bidx[:, None], idx]
        G = _g(W, gs, gpow, gf)
        dWx = _d1_ghost(_pad2(W, lo, hi), dx)
        dG = _d1_ghost(_pad2(G, glo, ghi), dx)
        V = W - phi[None]
        dV = _d1_one_sided(V, dx)
        l2_now = np.sum(w * V * V, axis=(1, 2))
        h1_now = np.sum(w * (V * V + dV * dV), axis=(1, 2))
        p1 = np.sum(w * dWx * psi[None], axis=(1, 2))
        p2 = np.sum(w * G * psi[None], axis=(1, 2))
        pg = np.sum(w * dG * psi[None], axis=(1, 2))
        pa = np.sum(w * W * apsi[None], axis=(1, 2))
        pf = np.sum(w * _f(W, model, a, varrho, gf) * psi[None], axis=(1, 2))
        chl = _chi_low(p1)
        b = -_chi_high(p2, K) / chl
        kappa = 1.0 + sig2 * b * b / (2.0 * rho)
        drift = -kappa / chl * (pa + (pf + c * p1 + sig2 * b * pg) / kappa)

        ea = np.exp(alpha * t)
        N1 = np.where(active, ea * l2_now, N1)
        l2 = np.where(active, l2_now, l2)
        h1 = np.where(active, h1_now, h1)
        ntot = N1 + N2
        live = active & ~exited
        supN = np.where(live & (ntot > supN), ntot, supN)
        newly = live & (ntot > eta)
        exit_time = np.where(newly, t, exit_time)
        exited = exited | newly
        if step % stride == 0 or step == nsteps:
            rec = np.stack([np.full(B, t), gamma, N1, N2, t + tau_x, np.sqrt(l2_now), np.sqrt(h1_now)], axis=1)
            sel = np.nonzero(active)[0]
            series[sel, nrec[sel]] = rec[sel]
            nrec[sel] += 1
        if step == nsteps:
            break
        if stop:
            active = active & ~exited
        if not active.any():
            break

        N2 = np.where(active, decay * N2 + dt * ea * h1_now, N2)
        # tau = t + excess, exact when kappa == 1
        tau_x = np.where(active, tau_x + (kappa - 1.0) * dt, tau_x)
        xi = dW[:, step]
        gamma_new = gamma + (c + drift) * dt + sigma * b * xi

        F = _f(U, model, a, varrho, gf)
        if scheme == 1 and step > 0:
            react = 1.5 * F - 0.5 * Fprev
        else:
            react = F
        P = np.concatenate([np.broadcast_to(lo[None, None, :], (B, 1, n)), U,
                            np.broadcast_to(hi[None, None, :], (B, 1, n))], axis=1)
        lap = P[:, 2:] - 2.0 * U + P[:, :-2]
        R = U + dt * react + sigma * _g(U, gs, gpow, gf) * xi[:, None, None] + rexp * lap
        R[:, 0, :] += rimp * lo[None, :]
        R[:, -1, :] += rimp * hi[None, :]
        rhs = np.transpose(R, (1, 0, 2)).reshape(N, B * n)
        Unew = np.transpose(solve_banded((1, 1), ab, rhs, check_finite=False).reshape(N, B, n),
                            (1, 0, 2))
        ok = np.isfinite(gamma_new) & np.isfinite(Unew[:, :, 0].sum(axis=1))
        bad = active & ~ok
        blowup |= bad
        blow_t = np.where(bad, t + dt, blow_t)
        upd = active & ok
        U[upd] = Unew[upd]
        gamma = np.where(upd, gamma_new, gamma)
        Fprev = np.where(upd[:, None, None], F, Fprev)
        active = upd

    res = np.stack([gamma, supN, exit_time, exited.astype(float), N1, N2, t_now + tau_x, np.sqrt(l2),
                    np.sqrt(h1), blowup.astype(float), blow_t, nrec.astype(float)], axis=1)
    return res, series
