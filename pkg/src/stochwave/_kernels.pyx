# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled path stepper.

One call integrates a single path of the coupled (U, Gamma) system. The state
is read in the co-moving frame W = T_{-Gamma} U, which gives both the
perturbation V = W - Phi_sigma and the phase functionals against the
unshifted psi. Layout and parameter packing are shared with
``stochwave._kernels_py`` (see ``stochwave.kernels.pack_params``).
"""
import numpy as np

from libc.math cimport exp, fabs, floor, sqrt, isfinite

# indices into the float parameter vector
cdef enum:
    P_DT = 0
    P_SIGMA = 1
    P_C = 2
    P_RHO = 3
    P_A = 4
    P_VARRHO = 5
    P_GFHN = 6
    P_GSCALE = 7
    P_EPS = 8
    P_ALPHA = 9
    P_ETA = 10
    P_KIP = 11
    P_DX = 12
    P_L0 = 13
    P_L1 = 14
    P_R0 = 15
    P_R1 = 16
    P_RIMP = 17
    P_REXP = 18

# indices into the integer parameter vector
cdef enum:
    I_NCOMP = 0
    I_MODEL = 1
    I_GPOW = 2
    I_SCHEME = 3
    I_STOP = 4


cdef inline double _chi(double u) nogil:
    cdef double t = fabs(u) - 2.0
    if t <= 0.0:
        return 1.0
    if t >= 1.0:
        return 0.0
    return 1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)


cdef inline double _herm(double s, double h, double p0, double d0, double p1, double d1) nogil:
    cdef double t = s / h
    cdef double t3 = t * t * t
    cdef double t4 = t3 * t
    cdef double t5 = t4 * t
    return (p0 * (1 - 10 * t3 + 15 * t4 - 6 * t5) + h * d0 * (t - 6 * t3 + 8 * t4 - 3 * t5)
            + p1 * (10 * t3 - 15 * t4 + 6 * t5) + h * d1 * (-4 * t3 + 7 * t4 - 3 * t5))


cdef inline double _chi_low(double x) nogil:
    if x <= 0.25:
        return 0.25
    if x >= 0.5:
        return x
    return _herm(x - 0.25, 0.25, 0.25, 0.0, 0.5, 1.0)


cdef inline double _chi_high(double x, double K) nogil:
    cdef double ax = fabs(x)
    cdef double y
    if ax <= K:
        y = ax
    elif ax >= K + 1.0:
        y = K + 1.0
    else:
        y = _herm(ax - K, 1.0, K, 1.0, K + 1.0, 0.0)
    return y if x >= 0 else -y


cdef inline double _g1(double u, double s, int pw) nogil:
    cdef double base = u * (1.0 - u)
    if pw == 2:
        base = base * u
    return s * _chi(u) * base


cdef inline double _cubic(double u, double a) nogil:
    return u * (1.0 - u) * (u - a)


cdef inline double _ext(double[:, ::1] U, Py_ssize_t i, Py_ssize_t k, Py_ssize_t N,
                        double lo, double hi) nogil:
    if i < 0:
        return lo
    if i >= N:
        return hi
    return U[i, k]


def run_path(double[:, ::1] U, double gamma, const double[::1] dW, const double[::1] fp,
             const long[::1] ip, const double[:, ::1] phi, const double[:, ::1] psi,
             const double[:, ::1] apsi, const double[::1] wts, const double[:, ::1] tc,
             const double[:, ::1] tinv, double[:, ::1] series, long stride):
    """Integrate one path in place. Returns a tuple of scalars, see kernels.py."""
    cdef Py_ssize_t N = U.shape[0]
    cdef int n = <int>ip[I_NCOMP]
    cdef int model = <int>ip[I_MODEL]
    cdef int gpow = <int>ip[I_GPOW]
    cdef int scheme = <int>ip[I_SCHEME]
    cdef int stop_on_exit = <int>ip[I_STOP]
    cdef Py_ssize_t nsteps = dW.shape[0]
    cdef double dt = fp[P_DT], sigma = fp[P_SIGMA], c = fp[P_C], rho = fp[P_RHO]
    cdef double a = fp[P_A], varrho = fp[P_VARRHO], gf = fp[P_GFHN], gs = fp[P_GSCALE]
    cdef double eps = fp[P_EPS], alpha = fp[P_ALPHA], eta = fp[P_ETA], K = fp[P_KIP]
    cdef double dx = fp[P_DX], rimp = fp[P_RIMP], rexp = fp[P_REXP]
    cdef double lo[2]
    cdef double hi[2]
    cdef double glo[2]
    cdef double ghi[2]
    lo[0] = fp[P_L0]; lo[1] = fp[P_L1]; hi[0] = fp[P_R0]; hi[1] = fp[P_R1]
    glo[0] = _g1(lo[0], gs, gpow); ghi[0] = _g1(hi[0], gs, gpow)
    glo[1] = lo[0] - gf * lo[1]; ghi[1] = hi[0] - gf * hi[1]
    cdef double sig2 = sigma * sigma
    cdef double decay = exp(-eps * dt)

    W_arr = np.zeros((N + 4, 2))
    G_arr = np.zeros((N + 4, 2))
    F_arr = np.zeros((N, 2))
    Fp_arr = np.zeros((N, 2))
    R_arr = np.zeros((N, 2))
    cdef double[:, ::1] Wb = W_arr      # W with two ghost rows on each side
    cdef double[:, ::1] Gb = G_arr      # g(W) with ghosts
    cdef double[:, ::1] F = F_arr
    cdef double[:, ::1] Fp = Fp_arr
    cdef double[:, ::1] R = R_arr

    cdef Py_ssize_t j, k, step, m, i0, nrec = 0
    cdef double s, th, w0, w1, w2, w3, u, v, dwj, dv, dg, wj, vj
    cdef double l2, h1, p1, p2, pf, pg, pa, chl, b, kappa, drift, N1 = 0.0, N2 = 0.0
    cdef double tau_x = 0.0, t, ntot, supN = 0.0, exit_time = -1.0, ea
    cdef int exited = 0, blowup = 0
    cdef double blow_t = -1.0, l2_last = 0.0, h1_last = 0.0, chk
    cdef double fac, ab0, ab1, xi_noise
    cdef Py_ssize_t lo_in, hi_in

    for step in range(nsteps + 1):
        t = step * dt
        # co-moving frame W(xi) = U(xi + Gamma) by 4-point Lagrange interpolation
        s = gamma / dx
        m = <Py_ssize_t>floor(s)
        th = s - m
        w0 = -th * (th - 1.0) * (th - 2.0) / 6.0
        w1 = (th + 1.0) * (th - 1.0) * (th - 2.0) / 2.0
        w2 = -(th + 1.0) * th * (th - 2.0) / 2.0
        w3 = (th + 1.0) * th * (th - 1.0) / 6.0
        lo_in = 1 - m
        if lo_in < 0:
            lo_in = 0
        hi_in = N - 2 - m
        if hi_in > N:
            hi_in = N
        if lo_in > N:
            lo_in = N
        if hi_in < lo_in:
            hi_in = lo_in
        for k in range(n):
            for j in range(0, lo_in):
                i0 = j + m - 1
                Wb[j + 2, k] = (w0 * _ext(U, i0, k, N, lo[k], hi[k]) + w1 * _ext(U, i0 + 1, k, N, lo[k], hi[k])
                                + w2 * _ext(U, i0 + 2, k, N, lo[k], hi[k]) + w3 * _ext(U, i0 + 3, k, N, lo[k], hi[k]))
            for j in range(lo_in, hi_in):
                i0 = j + m - 1
                Wb[j + 2, k] = w0 * U[i0, k] + w1 * U[i0 + 1, k] + w2 * U[i0 + 2, k] + w3 * U[i0 + 3, k]
            for j in range(hi_in, N):
                i0 = j + m - 1
                Wb[j + 2, k] = (w0 * _ext(U, i0, k, N, lo[k], hi[k]) + w1 * _ext(U, i0 + 1, k, N, lo[k], hi[k])
                                + w2 * _ext(U, i0 + 2, k, N, lo[k], hi[k]) + w3 * _ext(U, i0 + 3, k, N, lo[k], hi[k]))
            Wb[0, k] = lo[k]; Wb[1, k] = lo[k]; Wb[N + 2, k] = hi[k]; Wb[N + 3, k] = hi[k]
            Gb[0, k] = glo[k]; Gb[1, k] = glo[k]; Gb[N + 2, k] = ghi[k]; Gb[N + 3, k] = ghi[k]
        for j in range(N):
            u = Wb[j + 2, 0]
            Gb[j + 2, 0] = _g1(u, gs, gpow)
            if n == 2:
                Gb[j + 2, 1] = u - gf * Wb[j + 2, 1]

        # norms of V and inner products against psi
        l2 = 0.0; h1 = 0.0; p1 = 0.0; p2 = 0.0; pf = 0.0; pg = 0.0; pa = 0.0
        for j in range(N):
            wj = wts[j]
            for k in range(n):
                u = Wb[j + 2, k]
                vj = u - phi[j, k]
                dwj = (-Wb[j + 4, k] + 8.0 * Wb[j + 3, k] - 8.0 * Wb[j + 1, k] + Wb[j, k]) / (12.0 * dx)
                dg = (-Gb[j + 4, k] + 8.0 * Gb[j + 3, k] - 8.0 * Gb[j + 1, k] + Gb[j, k]) / (12.0 * dx)
                if j >= 2 and j < N - 2:
                    dv = dwj - (-phi[j + 2, k] + 8.0 * phi[j + 1, k] - 8.0 * phi[j - 1, k] + phi[j - 2, k]) / (12.0 * dx)
                elif j == 0:
                    dv = (-25.0 * (Wb[2, k] - phi[0, k]) + 48.0 * (Wb[3, k] - phi[1, k]) - 36.0 * (Wb[4, k] - phi[2, k])
                          + 16.0 * (Wb[5, k] - phi[3, k]) - 3.0 * (Wb[6, k] - phi[4, k])) / (12.0 * dx)
                elif j == 1:
                    dv = (-3.0 * (Wb[2, k] - phi[0, k]) - 10.0 * (Wb[3, k] - phi[1, k]) + 18.0 * (Wb[4, k] - phi[2, k])
                          - 6.0 * (Wb[5, k] - phi[3, k]) + (Wb[6, k] - phi[4, k])) / (12.0 * dx)
                elif j == N - 1:
                    dv = (25.0 * (Wb[N + 1, k] - phi[N - 1, k]) - 48.0 * (Wb[N, k] - phi[N - 2, k]) + 36.0 * (Wb[N - 1, k] - phi[N - 3, k])
                          - 16.0 * (Wb[N - 2, k] - phi[N - 4, k]) + 3.0 * (Wb[N - 3, k] - phi[N - 5, k])) / (12.0 * dx)
                else:
                    dv = (3.0 * (Wb[N + 1, k] - phi[N - 1, k]) + 10.0 * (Wb[N, k] - phi[N - 2, k]) - 18.0 * (Wb[N - 1, k] - phi[N - 3, k])
                          + 6.0 * (Wb[N - 2, k] - phi[N - 4, k]) - (Wb[N - 3, k] - phi[N - 5, k])) / (12.0 * dx)
                l2 += wj * vj * vj
                h1 += wj * (vj * vj + dv * dv)
                p1 += wj * dwj * psi[j, k]
                p2 += wj * Gb[j + 2, k] * psi[j, k]
                pg += wj * dg * psi[j, k]
                pa += wj * u * apsi[j, k]
            u = Wb[j + 2, 0]
            if model == 0:
                pf += wj * _cubic(u, a) * psi[j, 0]
            else:
                v = Wb[j + 2, 1]
                pf += wj * ((_cubic(u, a) - v) * psi[j, 0] + varrho * (u - gf * v) * psi[j, 1])

        chl = _chi_low(p1)
        b = -_chi_high(p2, K) / chl
        kappa = 1.0 + sig2 * b * b / (2.0 * rho)
        drift = -kappa / chl * (pa + (pf + c * p1 + sig2 * b * pg) / kappa)

        ea = exp(alpha * t)
        N1 = ea * l2
        ntot = N1 + N2
        if not exited:
            if ntot > supN:
                supN = ntot
            if ntot > eta:
                exited = 1
                exit_time = t
        l2_last = l2
        h1_last = h1
        if step % stride == 0 or step == nsteps:
            series[nrec, 0] = t
            series[nrec, 1] = gamma
            series[nrec, 2] = N1
            series[nrec, 3] = N2
            series[nrec, 4] = t + tau_x
            series[nrec, 5] = sqrt(l2)
            series[nrec, 6] = sqrt(h1)
            nrec += 1
        if step == nsteps or (exited and stop_on_exit):
            break

        # scalar updates
        N2 = decay * N2 + dt * ea * h1
        tau_x += (kappa - 1.0) * dt     # tau = t + excess, exact when kappa == 1
        xi_noise = dW[step]
        gamma = gamma + (c + drift) * dt + sigma * b * xi_noise

        # reaction and noise at the left point
        for j in range(N):
            u = U[j, 0]
            if model == 0:
                F[j, 0] = _cubic(u, a)
            else:
                v = U[j, 1]
                F[j, 0] = _cubic(u, a) - v
                F[j, 1] = varrho * (u - gf * v)
        if scheme == 1 and step > 0:
            ab0 = 1.5
            ab1 = -0.5
        else:
            ab0 = 1.0
            ab1 = 0.0
        for k in range(n):
            for j in range(N):
                u = U[j, k]
                if k == 0:
                    fac = _g1(u, gs, gpow)
                else:
                    fac = U[j, 0] - gf * U[j, 1]
                R[j, k] = (u + dt * (ab0 * F[j, k] + ab1 * Fp[j, k]) + sigma * fac * xi_noise
                           + rexp * (_ext(U, j + 1, k, N, lo[k], hi[k]) - 2.0 * u
                                     + _ext(U, j - 1, k, N, lo[k], hi[k])))
            R[0, k] += rimp * lo[k]
            R[N - 1, k] += rimp * hi[k]
        # all right-hand sides are built before U is overwritten
        for k in range(n):
            # Thomas solve with the precomputed factorization
            R[0, k] = R[0, k] * tinv[k, 0]
            for j in range(1, N):
                R[j, k] = (R[j, k] + rimp * R[j - 1, k]) * tinv[k, j]
            U[N - 1, k] = R[N - 1, k]
            for j in range(N - 2, -1, -1):
                U[j, k] = R[j, k] - tc[k, j] * U[j + 1, k]
        chk = gamma
        for j in range(N):
            for k in range(n):
                Fp[j, k] = F[j, k]
            chk += U[j, 0]
        if not isfinite(chk):
            blowup = 1
            blow_t = t + dt
            break

    return (gamma, supN, exit_time, exited, N1, N2, t + tau_x, sqrt(l2_last), sqrt(h1_last),
            blowup, blow_t, nrec)
