"""Pure-numpy path kernel, vectorized over paths.

Same contract as the compiled ``_kernel.run_paths``; see ``kernels.py``.
"""
import numpy as np

N_ACC = 7
ACC_LOGV, ACC_LOGD_MKT, ACC_LOGD_H, ACC_INT_G, ACC_LOGD_COMB, ACC_INT_AU, ACC_QV = range(N_ACC)


def run_paths(dW, dt, x0, rate, eta, xi, h0, H1, Qt, qt, dQt, dqt, dkt, halftr,
              a, A, b, B, Sig, Lam, theta, measure, XT_out, acc_out, Xpath=None):
    P, N, d = dW.shape
    x = np.broadcast_to(x0, (P, x0.shape[0])).copy()
    acc = np.zeros((P, N_ACC))
    half_th = 0.5 * theta
    LL = Lam @ Lam.T
    if Xpath is not None:
        Xpath[:, 0, :] = x
    for k in range(N):
        h_ = dt[k]
        r = rate[k]
        phi = x @ eta[k] + xi[k]                      # (P, d)
        hv = h0[k] + x @ H1[k].T                      # (P, m)
        sh = hv @ Sig                                 # Sigma' h, (P, d)
        delta = a + x @ A.T - r                       # (P, m)
        p = x @ Qt[k].T + qt[k]                       # Du, (P, n)
        lp = p @ Lam                                  # Lambda' Du, (P, d)
        sh2 = np.einsum("ij,ij->i", sh, sh)
        phi2 = np.einsum("ij,ij->i", phi, phi)

        drift = b + x @ B.T
        if measure >= 1:
            drift = drift - phi @ Lam.T
        if measure == 2:
            drift = drift - half_th * (sh @ Lam.T)

        dws = dW[:, k, :]
        if measure == 0:
            dwm = dws + phi * h_
        elif measure == 1:
            dwm = dws
        else:
            dwm = dws - half_th * sh * h_
        dwp = dwm - phi * h_

        g = (0.5 * (half_th + 1.0) * sh2 - r
             - np.einsum("ij,ij->i", hv, delta) + np.einsum("ij,ij->i", sh, phi))
        c = lp + sh
        c2 = np.einsum("ij,ij->i", c, c)

        # generator applied to u along the path, with the investor-tilted drift
        du_t = 0.5 * np.einsum("ij,ij->i", x @ dQt[k].T, x) + x @ dqt[k] + dkt[k]
        gen_drift = b + x @ B.T - phi @ Lam.T - half_th * (sh @ Lam.T)
        au = (du_t + np.einsum("ij,ij->i", gen_drift, p) + halftr[k]
              - 0.25 * theta * np.einsum("ij,ij->i", p @ LL, p) - g)

        acc[:, ACC_LOGV] += (r + np.einsum("ij,ij->i", hv, delta) - 0.5 * sh2) * h_ \
            + np.einsum("ij,ij->i", sh, dwp)
        acc[:, ACC_LOGD_MKT] += -np.einsum("ij,ij->i", phi, dwp) - 0.5 * phi2 * h_
        acc[:, ACC_LOGD_H] += -half_th * np.einsum("ij,ij->i", sh, dwm) - 0.125 * theta * theta * sh2 * h_
        acc[:, ACC_INT_G] += g * h_
        acc[:, ACC_LOGD_COMB] += -half_th * np.einsum("ij,ij->i", c, dwm) - 0.125 * theta * theta * c2 * h_
        acc[:, ACC_INT_AU] += au * h_

        dx = drift * h_ + dws @ Lam.T
        # realized minus expected quadratic variation of u along the step
        acc[:, ACC_QV] += 0.5 * np.einsum("ij,ij->i", dx @ Qt[k], dx) - halftr[k] * h_
        x = x + dx
        if Xpath is not None:
            Xpath[:, k + 1, :] = x
    XT_out[...] = x
    acc_out[...] = acc
