import numpy as np
import pytest

from conftest import make_model, scalar_oracle_model
from rsgame.equilibrium import (
    SampleSpec,
    classify_equilibrium,
    first_order_h,
    hjb_gradient_h,
    hjb_operator,
    identity_residual,
    market_coefficient,
    optimal_h,
    optimal_market_controls,
    strategy_pair,
    verification_conditions,
)
from rsgame.model import mmm_controls
from rsgame.riccati import solve_coefficients

TERMINAL = ([[0.5]], [0.3])
# Q(0), q(0) from the fine-step scalar oracle (rho = 0.15, terminal data above)
ORACLE_Q0, ORACLE_q0 = 0.05465601172039826, 0.0955299930936004


def _cases(rng):
    m2 = make_model(rng, m=2, n=2)
    return [
        (scalar_oracle_model(), None),
        (scalar_oracle_model(rho=0.15), TERMINAL),
        (m2, None),
        (m2, (0.4 * np.eye(2), np.array([0.2, -0.3]))),
    ]


@pytest.fixture(scope="module")
def solved():
    rng = np.random.default_rng(5)
    return [(m, solve_coefficients(m, 2000, terminal=term)) for m, term in _cases(rng)]


def _random_points(rng, model, k):
    return rng.uniform(0, model.T, k), rng.uniform(-3, 3, (k, model.n))


class TestStrategies:
    def test_identity_residual(self, solved, rng):
        for model, c in solved:
            ts, xs = _random_points(rng, model, 100)
            assert max(identity_residual(c, model, t, x) for t, x in zip(ts, xs)) <= 1e-8

    def test_independent_noise_gives_zero_h(self, rng):
        m = make_model(rng, independent=True)
        c = solve_coefficients(m, 200, terminal=(np.eye(2), np.ones(2)))
        for t, x in zip(*_random_points(rng, m, 10)):
            assert np.abs(optimal_h(c, m, t, x)).max() <= 1e-12

    def test_zero_at_horizon(self, solved):
        model, c = solved[2]
        assert not optimal_h(c, model, model.T, [1.0, -2.0]).any()

    def test_scalar_oracle_chain(self, solved):
        model, c = solved[1]
        sigma, lam_s = 0.2, 0.15
        ref = -(sigma * lam_s / sigma**2) * (ORACLE_Q0 * 0.5 + ORACLE_q0)
        assert optimal_h(c, model, 0.0, [0.5])[0] == pytest.approx(ref, abs=1e-9)

    def test_first_order_matches_at_equilibrium(self, solved, rng):
        for model, c in solved:
            for t, x in zip(*_random_points(rng, model, 10)):
                eta, xi = optimal_market_controls(c, model, t)
                assert np.abs(first_order_h(c, model, t, x, eta, xi) - optimal_h(c, model, t, x)).max() <= 1e-8

    def test_first_order_zero_numerator(self):
        m = scalar_oracle_model(A=[[0.0]], a=[0.02])
        c = solve_coefficients(m, 50)
        assert not first_order_h(c, m, 0.5, [0.3], np.zeros((1, 2)), np.zeros(2)).any()

    def test_first_order_beats_sampled_h(self, solved, rng):
        model, c = solved[3]
        t, x = 0.4, rng.standard_normal(model.n)
        eta, xi = rng.standard_normal((model.n, model.d)), rng.standard_normal(model.d)
        hstar = first_order_h(c, model, t, x, eta, xi)
        best = hjb_operator(c, model, t, x, hstar, eta, xi)
        samples = hstar + rng.uniform(-2, 2, (1000, model.m))
        vals = [hjb_operator(c, model, t, x, h, eta, xi) for h in samples]
        assert max(vals) <= best + 1e-8

    def test_market_controls_independent_noise(self, rng):
        m = make_model(rng, independent=True)
        c = solve_coefficients(m, 200, terminal=(np.eye(2), np.ones(2)))
        for t in (0.0, 0.2, 0.9):
            e1, x1 = optimal_market_controls(c, m, t)
            e2, x2 = mmm_controls(m, t)
            assert np.abs(e1 - e2).max() <= 1e-10 and np.abs(x1 - x2).max() <= 1e-10

    def test_market_controls_at_zero_coefficients(self, solved):
        model, c = solved[2]
        S = model.Sigma.T @ np.linalg.inv(model.Sigma @ model.Sigma.T)
        eta, xi = optimal_market_controls(c, model, 0.1)
        assert np.abs(eta - model.A.T @ S.T).max() < 1e-12
        assert np.abs(xi - (model.a - model.r(0.1)) @ S.T).max() < 1e-12

    def test_strategy_pair_evaluates_same_controls(self, solved, rng):
        model, c = solved[3]
        pair = strategy_pair(c, model)
        t, x = 0.33, rng.standard_normal(model.n)
        r = c.rate_at(t)
        assert np.allclose(pair.investor(t, x, r), optimal_h(c, model, t, x), atol=1e-14)
        eta, xi = optimal_market_controls(c, model, t)
        e2, x2 = pair.market(t, r)
        assert np.allclose(eta, e2, atol=1e-14) and np.allclose(xi, x2, atol=1e-14)


class TestOperator:
    def test_zero_at_equilibrium(self, solved):
        for model, c in solved:
            worst = 0.0
            for t in np.linspace(0, model.T, 10):
                eta, xi = optimal_market_controls(c, model, t)
                for x in np.linspace(-2, 2, 10)[:, None] * np.ones(model.n):
                    h = optimal_h(c, model, t, x)
                    worst = max(worst, abs(hjb_operator(c, model, t, x, h, eta, xi)))
            assert worst <= 1e-6

    def test_investor_deviation_lowers_value(self, solved, rng):
        model, c = solved[1]
        t, x = 0.5, np.array([0.7])
        eta, xi = optimal_market_controls(c, model, t)
        h = optimal_h(c, model, t, x)
        base = hjb_operator(c, model, t, x, h, eta, xi)
        for d in rng.standard_normal((50, model.m)):
            assert hjb_operator(c, model, t, x, h + d, eta, xi) <= base

    def test_numerical_gradient_vanishes(self, solved, rng):
        for model, c in solved:
            for t, x in zip(*_random_points(rng, model, 100)):
                eta, xi = optimal_market_controls(c, model, t)
                h = optimal_h(c, model, t, x)
                eps = 1e-6
                grad = [
                    (hjb_operator(c, model, t, x, h + eps * e, eta, xi)
                     - hjb_operator(c, model, t, x, h - eps * e, eta, xi)) / (2 * eps)
                    for e in np.eye(model.m)
                ]
                assert np.linalg.norm(grad) <= 1e-6

    def test_analytic_gradient_matches_fd(self, solved, rng):
        model, c = solved[3]
        t, x, h = 0.6, rng.standard_normal(2), rng.standard_normal(2)
        eta, xi = rng.standard_normal((2, 4)), rng.standard_normal(4)
        eps = 1e-6
        fd = [(hjb_operator(c, model, t, x, h + eps * e, eta, xi)
               - hjb_operator(c, model, t, x, h - eps * e, eta, xi)) / (2 * eps) for e in np.eye(2)]
        assert np.allclose(hjb_gradient_h(c, model, t, x, h, eta, xi), fd, atol=1e-7)

    def test_linear_in_market_controls(self, solved, rng):
        model, c = solved[3]
        t, x = 0.25, rng.standard_normal(2)
        h = optimal_h(c, model, t, x)
        eta, xi = optimal_market_controls(c, model, t)
        E, F = rng.standard_normal((2, 4)), rng.standard_normal(4)
        base = hjb_operator(c, model, t, x, h, eta, xi)
        moved = hjb_operator(c, model, t, x, h, eta + E, xi + F)
        coef = market_coefficient(c, model, t, x, h)
        assert moved - base == pytest.approx(coef @ (E.T @ x + F), abs=1e-12)

    def test_market_coefficient_is_orthogonal_part(self, solved, rng):
        # at the equilibrium h the coefficient is -(I - P) Lambda' Du
        model, c = solved[3]
        t, x = 0.25, rng.standard_normal(2)
        Q, q, _ = c.at(t)
        ref = -(np.eye(model.d) - model.projector) @ model.Lambda.T @ (Q @ x + q)
        assert np.abs(market_coefficient(c, model, t, x, optimal_h(c, model, t, x)) - ref).max() < 1e-12


class TestVerification:
    def test_scalar_model_passes(self, solved):
        model, c = solved[0]
        diag = verification_conditions(c, model)
        assert diag.passed, diag.flags()
        assert diag.hjb_residual_max <= 1e-6

    def test_terminal_condition_exact(self, solved):
        for model, c in solved:
            cond = {x.name: x for x in verification_conditions(c, model, SampleSpec(n_times=3, n_perturb=2)).conditions}
            if not c.Q[-1].any() and not c.q[-1].any():
                assert cond["terminal"].margin == 0.0

    def test_non_vanishing_market_coefficient_is_flagged(self, solved):
        model, c = solved[1]
        diag = verification_conditions(c, model, SampleSpec(n_times=5, n_perturb=5))
        assert "market_coefficient" in diag.flags()
        witness = next(x for x in diag.conditions if x.name == "market_coefficient").witness
        assert {"t", "x"} <= set(witness)
        assert next(x for x in diag.conditions if x.name == "hjb_zero").passed


class TestClassification:
    def test_independent_noise(self, rng):
        m = make_model(rng, independent=True)
        c = solve_coefficients(m, 300, terminal=(0.5 * np.eye(2), np.ones(2)))
        d = classify_equilibrium(c, m)
        assert d.is_mmm and d.is_no_regret and d.implication_holds

    def test_no_factor_noise(self, rng):
        m = make_model(rng)
        m = m.with_(Lambda=np.zeros_like(m.Lambda))
        d = classify_equilibrium(solve_coefficients(m, 100, terminal=(np.eye(2), np.ones(2))), m)
        assert d.is_mmm and d.is_no_regret

    def test_correlated_with_nonzero_Q(self, solved):
        model, c = solved[1]
        d = classify_equilibrium(c, model)
        assert not d.is_mmm and not d.is_no_regret
        assert d.mmm_residual_Q > 1e-3

    def test_residuals_by_time_nonnegative(self, solved):
        for model, c in solved:
            d = classify_equilibrium(c, model)
            for key in ("mmm_residual_Q", "mmm_residual_q", "h_max", "h_sigma_max"):
                assert (d.by_time[key] >= 0).all()
            assert d.is_mmm == (d.mmm_residual_Q <= 1e-7 and d.mmm_residual_q <= 1e-7)

    def test_implication_when_mmm(self, solved):
        for model, c in solved:
            d = classify_equilibrium(c, model)
            if d.is_mmm:
                assert d.h_sigma_max <= 1e-6
