"""Saddle-point strategies, the HJBI operator and verification diagnostics.

Given solved coefficients ``(Q, q, k)`` the investor's feedback is

    h(t, x) = -(Sigma Sigma')^{-1} Sigma Lambda' (Q(t) x + q(t))

and the market's controls are ``eta = (Q Lambda Sigma' + A')(Sigma Sigma')^{-1} Sigma``,
``xi = ((a - r1)' + q' Lambda Sigma')(Sigma Sigma')^{-1} Sigma``.  The operator
is evaluated directly from its definition, independently of the reduced
coefficient equations used by the solver.

All functions take the short rate from ``coeffs.rate_at(t)`` (the rate of the
solver interval containing ``t``, the earlier one at a node), so operator,
controls and stored derivatives agree even at rate breakpoints.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .controls import InvestorControl, MarketControls
from .model import MarketModel
from .riccati import ValueCoefficients, eta_hat_from_Q, xi_hat_from_q

__all__ = [
    "StrategyPair",
    "SampleSpec",
    "ConditionMargin",
    "EquilibriumDiagnostics",
    "strategy_pair",
    "optimal_h",
    "first_order_h",
    "optimal_market_controls",
    "hjb_operator",
    "hjb_operator_batch",
    "hjb_gradient_h",
    "market_coefficient",
    "identity_residual",
    "mmm_residuals",
    "verification_conditions",
    "classify_equilibrium",
]


def _feedback(model: MarketModel, Q, q):
    """``(h0, H1)`` with ``h = h0 + H1 x``."""
    G = -model.solve_ss(model.Sigma @ model.Lambda.T)  # (m, n)
    return G @ q, G @ Q


@dataclass(frozen=True)
class StrategyPair:
    investor: InvestorControl
    market: MarketControls
    coeffs: ValueCoefficients


def strategy_pair(coeffs: ValueCoefficients, model: MarketModel) -> StrategyPair:
    """Equilibrium controls as evaluable time functions built from ``coeffs``."""

    def h0(t, r):
        Q, q, _ = coeffs.at(t)
        return _feedback(model, Q, q)[0]

    def H1(t, r):
        Q, q, _ = coeffs.at(t)
        return _feedback(model, Q, q)[1]

    def eta(t, r):
        return eta_hat_from_Q(model, coeffs.at(t)[0])

    def xi(t, r):
        return xi_hat_from_q(model, coeffs.at(t)[1], r)

    return StrategyPair(
        InvestorControl(h0, H1, "equilibrium"),
        MarketControls(eta, xi, "equilibrium"),
        coeffs,
    )


def optimal_h(coeffs: ValueCoefficients, model: MarketModel, t: float, x) -> np.ndarray:
    Q, q, _ = coeffs.at(t)
    h0, H1 = _feedback(model, Q, q)
    return h0 + H1 @ np.asarray(x, dtype=float)


def first_order_h(coeffs, model: MarketModel, t: float, x, eta_t, xi_t) -> np.ndarray:
    """Maximizer in ``h`` of the operator for arbitrary market controls."""
    x = np.asarray(x, dtype=float)
    Q, q, _ = coeffs.at(t)
    r = coeffs.rate_at(t)
    p = Q @ x + q
    delta = model.a + model.A @ x - r
    phi = np.asarray(eta_t).T @ x + np.asarray(xi_t).reshape(-1)
    rhs = delta - model.Sigma @ phi - 0.5 * model.theta * model.Sigma @ (model.Lambda.T @ p)
    return (2.0 / (model.theta + 2.0)) * model.solve_ss(rhs)


def optimal_market_controls(coeffs: ValueCoefficients, model: MarketModel, t: float):
    Q, q, _ = coeffs.at(t)
    return eta_hat_from_Q(model, Q), xi_hat_from_q(model, q, coeffs.rate_at(t))


def hjb_operator_batch(coeffs: ValueCoefficients, model: MarketModel, t: float, X, H, Phi) -> np.ndarray:
    """Operator values at one time for rows of ``X`` (P, n), ``H`` (P, m), ``Phi`` (P, d).

    ``Phi`` holds ``eta(t)'x + xi(t)'`` per row, which is all the operator
    needs from the market controls.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    th = model.theta
    Lam, Sig = model.Lambda, model.Sigma
    Q, q, _ = coeffs.at(t)
    dQ, dq, dk = coeffs.derivative_at(t)
    r = coeffs.rate_at(t)

    ut = 0.5 * np.einsum("pi,ij,pj->p", X, dQ, X) + X @ dq + dk
    P = X @ Q + q  # Q symmetric
    SH = H @ Sig  # rows are (Sigma' h)'
    drift = model.b + X @ model.B.T - Phi @ Lam.T - 0.5 * th * SH @ Lam.T
    LP = P @ Lam
    delta = model.a + X @ model.A.T - r
    g = (
        0.5 * (0.5 * th + 1.0) * np.einsum("pj,pj->p", SH, SH)
        - r
        - np.einsum("pi,pi->p", H, delta)
        + np.einsum("pj,pj->p", SH, Phi)
    )
    return (
        ut
        + np.einsum("pi,pi->p", drift, P)
        + 0.5 * np.sum((Lam @ Lam.T) * Q)
        - 0.25 * th * np.einsum("pj,pj->p", LP, LP)
        - g
    )


def hjb_operator(coeffs, model: MarketModel, t: float, x, h, eta_t, xi_t) -> float:
    """Operator value at a single ``(t, x, h, eta, xi)``."""
    x = np.asarray(x, dtype=float)
    phi = np.asarray(eta_t).T @ x + np.asarray(xi_t).reshape(-1)
    return float(hjb_operator_batch(coeffs, model, t, x[None], np.asarray(h)[None], phi[None])[0])


def hjb_gradient_h(coeffs, model: MarketModel, t: float, x, h, eta_t, xi_t) -> np.ndarray:
    """Analytic gradient of the operator with respect to ``h``."""
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=float)
    Q, q, _ = coeffs.at(t)
    r = coeffs.rate_at(t)
    th = model.theta
    p = Q @ x + q
    phi = np.asarray(eta_t).T @ x + np.asarray(xi_t).reshape(-1)
    S = model.Sigma
    return (
        model.a + model.A @ x - r
        - S @ phi
        - 0.5 * th * S @ (model.Lambda.T @ p)
        - (0.5 * th + 1.0) * S @ (S.T @ h)
    )


def market_coefficient(coeffs, model: MarketModel, t: float, x, h) -> np.ndarray:
    """Coefficient ``c`` of the operator's linear dependence on ``phi = eta'x + xi'``.

    The operator equals ``(terms free of phi) + c' phi`` with
    ``c = -(Lambda' Du + Sigma' h)``.  At the equilibrium ``h`` this is
    ``-(I - P) Lambda' Du``, ``P`` the projector onto the row space of Sigma.
    """
    x = np.asarray(x, dtype=float)
    Q, q, _ = coeffs.at(t)
    return -(model.Lambda.T @ (Q @ x + q) + model.Sigma.T @ np.asarray(h, dtype=float))


def identity_residual(coeffs, model: MarketModel, t: float, x) -> float:
    """``| -Sigma Lambda' Du - (delta - Sigma(eta'x + xi')) |`` at the equilibrium controls."""
    x = np.asarray(x, dtype=float)
    Q, q, _ = coeffs.at(t)
    eta, xi = optimal_market_controls(coeffs, model, t)
    delta = model.a + model.A @ x - coeffs.rate_at(t)
    lhs = -model.Sigma @ model.Lambda.T @ (Q @ x + q)
    return float(np.linalg.norm(lhs - (delta - model.Sigma @ (eta.T @ x + xi))))


def mmm_residuals(coeffs: ValueCoefficients, model: MarketModel):
    """Per grid time: spectral norm of ``Q Lambda P`` and Euclidean norm of ``q' Lambda P``."""
    LP = model.Lambda @ model.projector
    Qres = np.array([np.linalg.norm(Q @ LP, 2) for Q in coeffs.Q])
    qres = np.linalg.norm(coeffs.q @ LP, axis=1)
    return Qres, qres


@dataclass(frozen=True)
class SampleSpec:
    n_times: int = 21
    n_points: int = 100
    n_perturb: int = 50
    radius: float | None = None  # default 5 |x0| + 1
    perturb_scale: float = 1.0
    seed: int = 0


@dataclass
class ConditionMargin:
    name: str
    margin: float
    tol: float
    passed: bool
    witness: dict = field(default_factory=dict)


@dataclass
class EquilibriumDiagnostics:
    is_mmm: bool | None = None
    mmm_residual_Q: float = float("nan")
    mmm_residual_q: float = float("nan")
    is_no_regret: bool | None = None
    h_max: float = float("nan")
    h_sigma_max: float = float("nan")
    short_positions: bool | None = None
    implication_holds: bool | None = None
    hjb_residual_max: float = float("nan")
    conditions: list[ConditionMargin] = field(default_factory=list)
    by_time: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        ok = all(c.passed for c in self.conditions)
        return ok and self.implication_holds is not False

    def flags(self) -> list[str]:
        return [c.name for c in self.conditions if not c.passed]


def _sample_points(model: MarketModel, spec: SampleSpec, rng):
    radius = spec.radius if spec.radius is not None else 5.0 * np.linalg.norm(model.x0) + 1.0
    z = rng.standard_normal((spec.n_points, model.n))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    rad = radius * rng.uniform(size=(spec.n_points, 1)) ** (1.0 / model.n)
    return z * rad


def _eq_batch(coeffs, model, t, X):
    Q, q, _ = coeffs.at(t)
    h0, H1 = _feedback(model, Q, q)
    eta, xi = optimal_market_controls(coeffs, model, t)
    return h0 + X @ H1.T, X @ eta + xi


def verification_conditions(coeffs: ValueCoefficients, model: MarketModel,
                            sample: SampleSpec = SampleSpec(), tol: float = 1e-6) -> EquilibriumDiagnostics:
    """Sampled checks of the saddle-point verification conditions.

    1. investor deviations never raise the operator above zero;
    2. market deviations never push it below zero (linear in ``phi``, so this
       also reports the largest coefficient norm);
    3. the operator vanishes at the equilibrium controls;
    4. the terminal value is ``log v`` for every ``x``.
    Integrability is left to the Monte Carlo density checks.
    """
    rng = np.random.default_rng(sample.seed)
    X = _sample_points(model, sample, rng)
    times = np.linspace(0.0, coeffs.T, sample.n_times)
    P = len(X)
    worst = {k: (-np.inf, {}) for k in ("c1", "c2", "c3", "coef")}

    def update(key, vals, t, extra):
        i = int(np.argmax(vals))
        if vals[i] > worst[key][0]:
            worst[key] = (float(vals[i]), {"t": float(t), "x": X[i].tolist(), **extra})

    for t in times:
        H, Phi = _eq_batch(coeffs, model, t, X)
        base = hjb_operator_batch(coeffs, model, t, X, H, Phi)
        update("c3", np.abs(base), t, {})
        Q, q, _ = coeffs.at(t)
        C = -((X @ Q + q) @ model.Lambda + H @ model.Sigma)
        update("coef", np.linalg.norm(C, axis=1), t, {})
        for _ in range(sample.n_perturb):
            dH = sample.perturb_scale * rng.standard_normal((P, model.m))
            up = hjb_operator_batch(coeffs, model, t, X, H + dH, Phi)
            update("c1", up, t, {"kind": "investor"})
            dPhi = sample.perturb_scale * rng.standard_normal((P, model.d))
            down = hjb_operator_batch(coeffs, model, t, X, H, Phi + dPhi)
            update("c2", -down, t, {"kind": "market"})

    XT = X
    uT = 0.5 * np.einsum("pi,ij,pj->p", XT, coeffs.Q[-1], XT) + XT @ coeffs.q[-1] + coeffs.k[-1]
    c4 = float(np.abs(uT - np.log(model.v)).max())

    diag = EquilibriumDiagnostics(hjb_residual_max=worst["c3"][0])
    diag.conditions = [
        ConditionMargin("investor_deviation", worst["c1"][0], tol, worst["c1"][0] <= tol, worst["c1"][1]),
        ConditionMargin("market_deviation", worst["c2"][0], tol, worst["c2"][0] <= tol, worst["c2"][1]),
        ConditionMargin("market_coefficient", worst["coef"][0], tol, worst["coef"][0] <= tol, worst["coef"][1]),
        ConditionMargin("hjb_zero", worst["c3"][0], tol, worst["c3"][0] <= tol, worst["c3"][1]),
        ConditionMargin("terminal", c4, 0.0, c4 == 0.0),
    ]
    return diag


def classify_equilibrium(coeffs: ValueCoefficients, model: MarketModel, tol: float = 1e-7,
                         sample: SampleSpec = SampleSpec(), diag: EquilibriumDiagnostics | None = None
                         ) -> EquilibriumDiagnostics:
    """MMM and no-regret classification over all grid times and sampled factors.

    Extends ``diag`` in place when given, so one report carries both the
    verification margins and the classification.
    """
    diag = diag if diag is not None else EquilibriumDiagnostics()
    Qres, qres = mmm_residuals(coeffs, model)
    X = _sample_points(model, sample, np.random.default_rng(sample.seed))
    G = -model.solve_ss(model.Sigma @ model.Lambda.T)
    # h(t_i, x_p) for every grid time and sample point: (N+1, P, m)
    Hs = np.einsum("mn,tnk,pk->tpm", G, coeffs.Q, X) + (coeffs.q @ G.T)[:, None, :]
    h_norm = np.linalg.norm(Hs, axis=2).max(axis=1)
    hs_norm = np.linalg.norm(Hs @ model.Sigma, axis=2).max(axis=1)

    diag.mmm_residual_Q = float(Qres.max())
    diag.mmm_residual_q = float(qres.max())
    diag.is_mmm = bool(diag.mmm_residual_Q <= tol and diag.mmm_residual_q <= tol)
    diag.h_max = float(h_norm.max())
    diag.h_sigma_max = float(hs_norm.max())
    diag.is_no_regret = bool(diag.h_max <= tol)
    diag.short_positions = bool((Hs < -tol).any())
    diag.implication_holds = (not diag.is_mmm) or diag.h_sigma_max <= 10 * tol
    diag.by_time = {
        "t": np.asarray(coeffs.times),
        "mmm_residual_Q": Qres,
        "mmm_residual_q": qres,
        "h_max": h_norm,
        "h_sigma_max": hs_norm,
    }
    return diag
