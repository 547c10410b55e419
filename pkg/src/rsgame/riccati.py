"""Backward integration of the value-function coefficients.

The value function is quadratic in the factor, ``u(t, x) = x'Q(t)x/2 + q(t)'x + k(t)``,
with ``Q(T) = 0``, ``q(T) = 0``, ``k(T) = log v``.  The equilibrium market
controls are substituted into the coefficient equations, so the system is
closed in ``(Q, q, k)``:

    dQ/dt = Q K0 Q - K1' Q - Q K1
    dq/dt = -(K1' - Q K0) q - Q b + Q M (a - r1) - Q M Sigma xi' + Q Lambda xi'
    dk/dt = -(q'b~ - q'K0 q/2 + tr(Lambda Lambda' Q)/2 + r)

where ``M = Lambda Sigma'(Sigma Sigma')^{-1}`` and ``b~ = b - M(a - r1)``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, RiccatiBlowUpError
from .model import MarketModel, require_valid

__all__ = [
    "ValueCoefficients",
    "k0_matrix",
    "k1_matrix",
    "eta_hat_from_Q",
    "xi_hat_from_q",
    "coefficient_rates",
    "solve_coefficients",
    "value_u",
    "grad_u",
    "ode_residual",
    "coefficients_to_csv",
]

_BLOWUP_LIMIT = 1e100


def k0_matrix(model: MarketModel) -> np.ndarray:
    """``K0 = (theta/2) Lambda (I - ((theta-2)/theta) P) Lambda'`` with ``P`` the Sigma row-space projector."""
    th = model.theta
    inner = np.eye(model.d) - ((th - 2.0) / th) * model.projector
    K0 = 0.5 * th * model.Lambda @ inner @ model.Lambda.T
    return 0.5 * (K0 + K0.T)


def eta_hat_from_Q(model: MarketModel, Q: np.ndarray) -> np.ndarray:
    """Equilibrium ``eta = (Q Lambda Sigma' + A')(Sigma Sigma')^{-1} Sigma``, shape (n, d)."""
    return (Q @ model.Lambda @ model.Sigma.T + model.A.T) @ model.sigma_pinv.T


def xi_hat_from_q(model: MarketModel, q: np.ndarray, r: float) -> np.ndarray:
    """Equilibrium ``xi = ((a - r1)' + q' Lambda Sigma')(Sigma Sigma')^{-1} Sigma``, length d."""
    return (model.a - r + model.Sigma @ model.Lambda.T @ q) @ model.sigma_pinv.T


def k1_matrix(model: MarketModel, Q_t: np.ndarray) -> np.ndarray:
    """Linear Riccati coefficient evaluated at the equilibrium ``eta(Q)``."""
    eta_t = eta_hat_from_Q(model, Q_t)
    M = model.hedge_matrix
    Lam = model.Lambda
    return model.B - Lam @ eta_t.T - M @ model.A + M @ model.Sigma @ eta_t.T


class _Rates:
    """Reduced right-hand side used by the integrator.

    At the equilibrium controls ``K1 = B - M A`` for every ``Q`` and the two
    ``xi`` terms of the ``q`` equation cancel; ``coefficient_rates`` keeps the
    unreduced form and the tests check the two agree.
    """

    def __init__(self, model: MarketModel):
        M = model.hedge_matrix
        self.K0 = k0_matrix(model)
        self.K1 = model.B - M @ model.A
        self.Ma = M @ model.a
        self.M1 = M.sum(axis=1)
        self.b = model.b
        self.LL = model.Lambda @ model.Lambda.T

    def __call__(self, Q, q, k, r):
        K0, K1 = self.K0, self.K1
        Mex = self.Ma - r * self.M1
        QK0 = Q @ K0
        dQ = QK0 @ Q - K1.T @ Q - Q @ K1
        dq = -(K1.T @ q) + QK0 @ q - Q @ (self.b - Mex)
        dk = -((self.b - Mex) @ q - 0.5 * q @ K0 @ q + 0.5 * np.sum(self.LL * Q) + r)
        return dQ, dq, float(dk)


def coefficient_rates(model: MarketModel, Q, q, k, r, K0=None):
    """Right-hand sides ``(dQ/dt, dq/dt, dk/dt)`` at rate ``r``, written term by term."""
    if K0 is None:
        K0 = k0_matrix(model)
    K1 = k1_matrix(model, Q)
    M = model.hedge_matrix
    Lam = model.Lambda
    xi = xi_hat_from_q(model, q, r)
    excess = model.a - r
    dQ = Q @ K0 @ Q - K1.T @ Q - Q @ K1
    dq = (
        -(K1.T - Q @ K0) @ q
        - Q @ model.b
        + Q.T @ (M @ excess)
        - Q.T @ (M @ (model.Sigma @ xi))
        + Q.T @ (Lam @ xi)
    )
    btilde = model.b - M @ excess
    dk = -(q @ btilde - 0.5 * q @ K0 @ q + 0.5 * np.trace(Lam @ Lam.T @ Q) + r)
    return dQ, dq, float(dk)


@dataclass(frozen=True)
class ValueCoefficients:
    """Coefficient grids with per-interval endpoint derivatives for Hermite interpolation.

    ``dQ[i, 0]`` and ``dQ[i, 1]`` are the derivatives at the left and right end
    of interval ``i``, evaluated with that interval's rate (the rate is
    constant on each interval, so one-sided derivatives are exact).
    """

    times: np.ndarray
    Q: np.ndarray
    q: np.ndarray
    k: np.ndarray
    dQ: np.ndarray
    dq: np.ndarray
    dk: np.ndarray
    rates: np.ndarray

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def n(self) -> int:
        return self.q.shape[1]

    def _locate(self, t: float):
        # An interior node belongs to the interval ending there, matching the
        # left-continuous rate schedule.
        times = self.times
        if not (times[0] <= t <= times[-1]):
            raise DomainError(f"t={t} outside [{times[0]}, {times[-1]}]")
        i = int(np.searchsorted(times, t, side="left")) - 1
        return max(i, 0)

    def at(self, t: float):
        """Interpolated ``(Q, q, k)`` at time ``t``."""
        i = self._locate(t)
        t0, t1 = self.times[i], self.times[i + 1]
        if t == t0:
            return self.Q[i], self.q[i], float(self.k[i])
        if t == t1:
            return self.Q[i + 1], self.q[i + 1], float(self.k[i + 1])
        h = t1 - t0
        s = (t - t0) / h
        w00 = 2 * s**3 - 3 * s**2 + 1
        w10 = (s**3 - 2 * s**2 + s) * h
        w01 = -2 * s**3 + 3 * s**2
        w11 = (s**3 - s**2) * h

        def interp(y, dy):
            return w00 * y[i] + w10 * dy[i, 0] + w01 * y[i + 1] + w11 * dy[i, 1]

        Q = interp(self.Q, self.dQ)
        return 0.5 * (Q + Q.T), interp(self.q, self.dq), float(interp(self.k, self.dk))

    def derivative_at(self, t: float):
        """Time derivative of the Hermite interpolant at ``t``."""
        i = self._locate(t)
        t0, t1 = self.times[i], self.times[i + 1]
        h = t1 - t0
        s = (t - t0) / h
        w00 = (6 * s**2 - 6 * s) / h
        w10 = 3 * s**2 - 4 * s + 1
        w01 = (-6 * s**2 + 6 * s) / h
        w11 = 3 * s**2 - 2 * s

        def interp(y, dy):
            return w00 * y[i] + w10 * dy[i, 0] + w01 * y[i + 1] + w11 * dy[i, 1]

        dQ = interp(self.Q, self.dQ)
        return 0.5 * (dQ + dQ.T), interp(self.q, self.dq), float(interp(self.k, self.dk))

    def rate_at(self, t: float) -> float:
        return float(self.rates[self._locate(t)])


def _solve_grid(model: MarketModel, steps: int) -> np.ndarray:
    uniform = np.linspace(0.0, model.T, steps + 1)
    extra = model.rate.breakpoints(model.T)
    if not extra:
        return uniform
    grid = np.union1d(uniform, extra)
    # drop nodes closer than 1e-12 relative to an existing node
    keep = np.concatenate(([True], np.diff(grid) > 1e-12 * model.T))
    return grid[keep]


def solve_coefficients(
    model: MarketModel,
    steps: int = 2000,
    terminal: tuple[np.ndarray, np.ndarray] | None = None,
) -> ValueCoefficients:
    """Integrate the coefficient equations backward from ``T`` with classical RK4.

    ``terminal`` optionally replaces ``(Q(T), q(T))`` (default zeros); this
    corresponds to a terminal payoff ``log v + x'Q_T x/2 + q_T'x`` and is used
    to exercise the integrator away from the trivial solution.
    Rate breakpoints are added to the uniform grid so ``r`` is constant on
    every step.
    """
    require_valid(model)
    if steps < 10:
        raise ValueError("steps must be >= 10")
    n = model.n
    times = _solve_grid(model, steps)
    N = len(times) - 1
    rates = np.array([model.r(0.5 * (times[i] + times[i + 1])) for i in range(N)])
    f = _Rates(model)

    Q = np.zeros((N + 1, n, n))
    q = np.zeros((N + 1, n))
    k = np.zeros(N + 1)
    dQ = np.zeros((N, 2, n, n))
    dq = np.zeros((N, 2, n))
    dk = np.zeros((N, 2))
    if terminal is not None:
        QT = np.asarray(terminal[0], dtype=float).reshape(n, n)
        Q[N] = 0.5 * (QT + QT.T)
        q[N] = np.asarray(terminal[1], dtype=float).reshape(n)
    k[N] = np.log(model.v)

    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(N - 1, -1, -1):
            h = times[i] - times[i + 1]  # negative
            r = rates[i]
            Qi, qi, ki = Q[i + 1], q[i + 1], k[i + 1]
            a1 = f(Qi, qi, ki, r)
            a2 = f(Qi + 0.5 * h * a1[0], qi + 0.5 * h * a1[1], ki + 0.5 * h * a1[2], r)
            a3 = f(Qi + 0.5 * h * a2[0], qi + 0.5 * h * a2[1], ki + 0.5 * h * a2[2], r)
            a4 = f(Qi + h * a3[0], qi + h * a3[1], ki + h * a3[2], r)
            Qn = Qi + (h / 6.0) * (a1[0] + 2 * a2[0] + 2 * a3[0] + a4[0])
            qn = qi + (h / 6.0) * (a1[1] + 2 * a2[1] + 2 * a3[1] + a4[1])
            kn = ki + (h / 6.0) * (a1[2] + 2 * a2[2] + 2 * a3[2] + a4[2])
            Qn = 0.5 * (Qn + Qn.T)
            if not (
                np.all(np.isfinite(Qn))
                and np.all(np.isfinite(qn))
                and np.isfinite(kn)
                and np.abs(Qn).max(initial=0.0) < _BLOWUP_LIMIT
                and np.abs(qn).max(initial=0.0) < _BLOWUP_LIMIT
                and abs(kn) < _BLOWUP_LIMIT
            ):
                raise RiccatiBlowUpError(times[i])
            Q[i], q[i], k[i] = Qn, qn, kn
            dQ[i, 1], dq[i, 1], dk[i, 1] = a1
            dQ[i, 0], dq[i, 0], dk[i, 0] = f(Qn, qn, kn, r)

    for arr in (times, Q, q, k, dQ, dq, dk, rates):
        arr.setflags(write=False)
    return ValueCoefficients(times, Q, q, k, dQ, dq, dk, rates)


def value_u(coeffs: ValueCoefficients, t: float, x) -> float:
    Q, q, k = coeffs.at(t)
    x = np.asarray(x, dtype=float)
    return float(0.5 * x @ Q @ x + q @ x + k)


def grad_u(coeffs: ValueCoefficients, t: float, x) -> np.ndarray:
    Q, q, _ = coeffs.at(t)
    return Q @ np.asarray(x, dtype=float) + q


def ode_residual(coeffs: ValueCoefficients, model: MarketModel, t: float) -> float:
    """Max-norm residual of the coefficient equations at an (off-grid) time ``t``.

    Uses the interpolated coefficients and the derivative of the interpolant.
    """
    Q, q, k = coeffs.at(t)
    dQ, dq, dk = coeffs.derivative_at(t)
    fQ, fq, fk = coefficient_rates(model, Q, q, k, coeffs.rate_at(t))
    return float(max(np.abs(dQ - fQ).max(), np.abs(dq - fq).max(), abs(dk - fk)))


def coefficients_to_csv(coeffs: ValueCoefficients, out=None) -> str:
    """Write one row per grid time: ``t, Q_i_j (row-major), q_i, k``."""
    n = coeffs.n
    header = ["t"] + [f"Q_{i}_{j}" for i in range(n) for j in range(n)] + [f"q_{i}" for i in range(n)] + ["k"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for i, t in enumerate(coeffs.times):
        row = [t, *coeffs.Q[i].ravel(), *coeffs.q[i], coeffs.k[i]]
        writer.writerow([repr(float(x)) for x in row])
    text = buf.getvalue()
    if out is not None:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text
