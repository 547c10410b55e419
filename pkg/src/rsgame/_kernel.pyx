# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled path kernel.

Per path and step it advances the factor by Euler-Maruyama and accumulates
log-wealth, the two Girsanov log-densities, the running cost integral, the
combined log-density and the integral of the generator applied to ``u``.
Contract is identical to ``_kernel_py.run_paths``.
"""
from libc.stdlib cimport malloc, free


cdef inline double _dot(const double* u, const double* w, Py_ssize_t n) noexcept nogil:
    cdef double s = 0.0
    cdef Py_ssize_t i
    for i in range(n):
        s += u[i] * w[i]
    return s


def run_paths(const double[:, :, ::1] dW, const double[::1] dt, const double[::1] x0,
              const double[::1] rate, const double[:, :, ::1] eta, const double[:, ::1] xi,
              const double[:, ::1] h0, const double[:, :, ::1] H1,
              const double[:, :, ::1] Qt, const double[:, ::1] qt,
              const double[:, :, ::1] dQt, const double[:, ::1] dqt, const double[::1] dkt,
              const double[::1] halftr,
              const double[::1] a, const double[:, ::1] A, const double[::1] b, const double[:, ::1] B,
              const double[:, ::1] Sig, const double[:, ::1] Lam,
              double theta, int measure,
              double[:, ::1] XT_out, double[:, ::1] acc_out, double[:, :, ::1] Xpath=None):
    cdef Py_ssize_t P = dW.shape[0], N = dW.shape[1], d = dW.shape[2]
    cdef Py_ssize_t n = x0.shape[0], m = a.shape[0]
    cdef Py_ssize_t ip, k, i, j
    cdef bint store = Xpath is not None
    cdef double half_th = 0.5 * theta, hstep, r, sh2, phi2, g, c2, du_t, au, hd, pLLp
    cdef double lv, ldm, ldh, ig, ldc, iau, qv
    cdef double* buf = <double*> malloc((4 * n + 6 * d + 2 * m + 3) * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    cdef double* x = buf
    cdef double* xn = x + n
    cdef double* p = xn + n
    cdef double* drift = p + n
    cdef double* phi = drift + n
    cdef double* sh = phi + d
    cdef double* lp = sh + d
    cdef double* dwm = lp + d
    cdef double* dwp = dwm + d
    cdef double* c = dwp + d
    cdef double* hv = c + d
    cdef double* delta = hv + m
    cdef double* tmp = delta + m

    try:
        with nogil:
            for ip in range(P):
                for i in range(n):
                    x[i] = x0[i]
                    if store:
                        Xpath[ip, 0, i] = x[i]
                lv = 0.0; ldm = 0.0; ldh = 0.0; ig = 0.0; ldc = 0.0; iau = 0.0; qv = 0.0
                for k in range(N):
                    hstep = dt[k]
                    r = rate[k]
                    # phi = eta' x + xi
                    for j in range(d):
                        phi[j] = xi[k, j]
                        for i in range(n):
                            phi[j] += eta[k, i, j] * x[i]
                    # h = h0 + H1 x ; delta = a + A x - r
                    for i in range(m):
                        hv[i] = h0[k, i]
                        delta[i] = a[i] - r
                        for j in range(n):
                            hv[i] += H1[k, i, j] * x[j]
                            delta[i] += A[i, j] * x[j]
                    # sh = Sigma' h
                    for j in range(d):
                        sh[j] = 0.0
                        for i in range(m):
                            sh[j] += Sig[i, j] * hv[i]
                    # p = Q x + q ; lp = Lambda' p
                    for i in range(n):
                        p[i] = qt[k, i]
                        for j in range(n):
                            p[i] += Qt[k, i, j] * x[j]
                    for j in range(d):
                        lp[j] = 0.0
                        for i in range(n):
                            lp[j] += Lam[i, j] * p[i]
                    sh2 = _dot(sh, sh, d)
                    phi2 = _dot(phi, phi, d)
                    hd = _dot(hv, delta, m)

                    # increments of the market-measure and physical Brownian motions
                    for j in range(d):
                        if measure == 0:
                            dwm[j] = dW[ip, k, j] + phi[j] * hstep
                        elif measure == 1:
                            dwm[j] = dW[ip, k, j]
                        else:
                            dwm[j] = dW[ip, k, j] - half_th * sh[j] * hstep
                        dwp[j] = dwm[j] - phi[j] * hstep
                        c[j] = lp[j] + sh[j]

                    g = 0.5 * (half_th + 1.0) * sh2 - r - hd + _dot(sh, phi, d)
                    c2 = _dot(c, c, d)

                    # generator drift b + Bx - Lambda phi - (theta/2) Lambda sh, and simulation drift
                    du_t = dkt[k]
                    pLLp = 0.0
                    for i in range(n):
                        tmp[0] = b[i]
                        for j in range(n):
                            tmp[0] += B[i, j] * x[j]
                            du_t += 0.5 * x[i] * dQt[k, i, j] * x[j]
                        du_t += dqt[k, i] * x[i]
                        tmp[1] = 0.0
                        tmp[2] = 0.0
                        for j in range(d):
                            tmp[1] += Lam[i, j] * phi[j]
                            tmp[2] += Lam[i, j] * sh[j]
                        drift[i] = tmp[0]
                        if measure >= 1:
                            drift[i] -= tmp[1]
                        if measure == 2:
                            drift[i] -= half_th * tmp[2]
                        du_t += (tmp[0] - tmp[1] - half_th * tmp[2]) * p[i]
                    pLLp = _dot(lp, lp, d)
                    au = du_t + halftr[k] - 0.25 * theta * pLLp - g

                    lv += (r + hd - 0.5 * sh2) * hstep + _dot(sh, dwp, d)
                    ldm += -_dot(phi, dwp, d) - 0.5 * phi2 * hstep
                    ldh += -half_th * _dot(sh, dwm, d) - 0.125 * theta * theta * sh2 * hstep
                    ig += g * hstep
                    ldc += -half_th * _dot(c, dwm, d) - 0.125 * theta * theta * c2 * hstep
                    iau += au * hstep

                    for i in range(n):
                        xn[i] = x[i] + drift[i] * hstep
                        for j in range(d):
                            xn[i] += Lam[i, j] * dW[ip, k, j]
                    # realized minus expected quadratic variation of u along the step
                    for i in range(n):
                        p[i] = xn[i] - x[i]
                    for i in range(n):
                        for j in range(n):
                            qv += 0.5 * p[i] * Qt[k, i, j] * p[j]
                    qv -= halftr[k] * hstep
                    for i in range(n):
                        x[i] = xn[i]
                        if store:
                            Xpath[ip, k + 1, i] = x[i]
                for i in range(n):
                    XT_out[ip, i] = x[i]
                acc_out[ip, 0] = lv
                acc_out[ip, 1] = ldm
                acc_out[ip, 2] = ldh
                acc_out[ip, 3] = ig
                acc_out[ip, 4] = ldc
                acc_out[ip, 5] = iau
                acc_out[ip, 6] = qv
    finally:
        free(buf)
