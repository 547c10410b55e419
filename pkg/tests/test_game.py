import warnings

import numpy as np
import pytest

from conftest import make_model, scalar_oracle_model
from rsgame.controls import InvestorControl, MarketControls
from rsgame.equilibrium import strategy_pair
from rsgame.game import (
    RISK_SEEKING_WARNING,
    appendix_identity_check,
    criterion_J,
    criterion_J_tilde,
    saddle_probe,
    u_tilde_estimate,
)
from rsgame.model import RateSchedule
from rsgame.riccati import solve_coefficients, value_u
from rsgame.simulation import SimulationSpec, simulate

TERMINAL = ([[0.5]], [0.3])


@pytest.fixture(scope="module")
def terminal_scalar():
    m = scalar_oracle_model(rho=0.15)
    return m, solve_coefficients(m, 2000, terminal=TERMINAL)


@pytest.fixture(scope="module")
def model2():
    return make_model(np.random.default_rng(4), m=2, n=2)


class TestCriteria:
    def test_J_zero_position(self, model2):
        rep = criterion_J(model2, SimulationSpec(50, 30, 1), InvestorControl.zero(model2))
        assert rep.estimate == pytest.approx(np.log(model2.v) + model2.rate.integral(0, model2.T), abs=1e-13)
        assert rep.std_error == 0.0

    def test_J_tends_to_expected_log_wealth(self, model2):
        inv = InvestorControl.constant(model2, [0.8, 0.5])
        spec = SimulationSpec(4000, 30, 2)
        logv = simulate(model2, spec, MarketControls.zero(model2), inv).log_V
        gaps = []
        for th in (1e-2, 5e-3):
            J = criterion_J(model2.with_(theta=th), spec, inv).estimate
            gaps.append(logv.mean() - J)
            # leading correction is (theta/4) Var(log V)
            assert gaps[-1] == pytest.approx(0.25 * th * logv.var(), rel=0.05)
        assert gaps[1] < gaps[0]

    def test_J_tilde_zero_position_any_market(self, model2):
        mk = MarketControls.constant(np.ones((2, 4)), np.full(4, -0.5))
        rep = criterion_J_tilde(model2, SimulationSpec(50, 30, 1), investor=InvestorControl.zero(model2), market=mk)
        assert rep.estimate == pytest.approx(np.log(model2.v) + model2.rate.integral(0, model2.T), abs=1e-13)

    def test_J_tilde_equals_closed_form(self, terminal_scalar):
        m, c = terminal_scalar
        rep = criterion_J_tilde(m, SimulationSpec(20_000, 100, 77), c)
        assert rep.closed_form == value_u(c, 0.0, m.x0)
        assert rep.std_error > 0 and rep.within(3.0)

    def test_degenerate_model_k_only(self, rng):
        m = make_model(rng, A=np.zeros((2, 2)))
        m = m.with_(Lambda=np.zeros_like(m.Lambda))
        c = solve_coefficients(m, 200)
        rep = criterion_J_tilde(m, SimulationSpec(100, 40, 3), c)
        assert rep.closed_form == c.k[0]
        assert rep.z_score == 0.0

    def test_csv_row(self, terminal_scalar):
        m, c = terminal_scalar
        row = criterion_J_tilde(m, SimulationSpec(100, 10, 3), c).csv_row()
        assert row[0] == "J_tilde" and len(row) == 5
        assert all(np.isfinite(float(v)) for v in row[1:])


class TestUTilde:
    def test_zero_position_closed_form(self, model2):
        t = 0.3
        rep = u_tilde_estimate(model2, SimulationSpec(40, 20, 2), investor=InvestorControl.zero(model2),
                               market=MarketControls.mmm(model2), t=t, x=[1.0, -1.0])
        ref = np.exp(-0.5 * model2.theta * model2.rate.integral(t, model2.T)) * model2.v ** (-0.5 * model2.theta)
        assert rep.estimate == pytest.approx(ref, rel=1e-13)
        assert not rep.bound_check.asserted

    @pytest.mark.parametrize("t,x", [(0.0, None), (0.4, [-0.8])])
    def test_equilibrium_matches_transform(self, terminal_scalar, t, x):
        m, c = terminal_scalar
        rep = u_tilde_estimate(m, SimulationSpec(20_000, 100, 5), c, t=t, x=x)
        assert rep.within(3.0)

    def test_bound_reported_with_margin(self, terminal_scalar):
        m, c = terminal_scalar
        bc = u_tilde_estimate(m, SimulationSpec(2000, 50, 5), c).bound_check
        assert bc.asserted and bc.lower == 0.0 and bc.upper > 0
        assert np.isfinite(bc.margin)

    def test_risk_seeking_warning(self, model2):
        m = model2.with_(theta=-0.5)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            rep = u_tilde_estimate(m, SimulationSpec(20, 10, 2), investor=InvestorControl.constant(m, [0.1, 0.1]),
                                   market=MarketControls.mmm(m))
        assert RISK_SEEKING_WARNING in rep.warnings
        assert any(RISK_SEEKING_WARNING in str(w.message) for w in caught)
        assert not rep.bound_check.asserted


class TestProbe:
    def test_null_perturbation(self, terminal_scalar):
        m, c = terminal_scalar
        rep = saddle_probe(m, SimulationSpec(500, 20, 1), c, n_directions=3, eps=(0.0,))
        assert all(r.delta == 0.0 for r in rep.rows)
        assert rep.passed

    def test_investor_deviation_strictly_lowers_value(self):
        m = scalar_oracle_model()  # Sigma Lambda' = 0, so the equilibrium position is zero
        c = solve_coefficients(m, 200)
        rep = saddle_probe(m, SimulationSpec(5000, 50, 2), c, n_directions=4, eps=(0.5, 1.0))
        inv = [r for r in rep.rows if r.side == "investor"]
        assert all(r.delta < -3 * r.se for r in inv)
        assert rep.passed

    def test_deltas_shrink_with_eps(self, terminal_scalar):
        m, c = terminal_scalar
        rep = saddle_probe(m, SimulationSpec(2000, 50, 3), c, n_directions=2, eps=(0.05, 0.1))
        for side in ("investor", "market"):
            for j in range(2):
                d = {r.eps: abs(r.delta) for r in rep.rows if r.side == side and r.direction == j}
                assert d[0.05] <= d[0.1] + 1e-12
        assert np.isfinite(rep.continuity_constant)


class TestIdentity:
    def test_deterministic_case(self, model2):
        m = model2.with_(Lambda=np.zeros_like(model2.Lambda))
        c = solve_coefficients(m, 200)
        rep = appendix_identity_check(m, SimulationSpec(50, 40, 3), c)
        assert rep.max_rel_discrepancy <= 1e-12

    def test_exact_at_zero_quadratic_part(self, model2):
        c = solve_coefficients(model2, 400)
        assert appendix_identity_check(model2, SimulationSpec(200, 40, 3), c).max_rel_discrepancy <= 1e-12

    def _ratio(self, m, c, **kw):
        coarse = appendix_identity_check(m, SimulationSpec(1000, 50, 8, refine=2), c, **kw)
        fine = appendix_identity_check(m, SimulationSpec(1000, 100, 8), c, **kw)
        return coarse.max_rel_discrepancy / fine.max_rel_discrepancy

    def test_first_order_refinement(self, terminal_scalar):
        m, c = terminal_scalar
        assert 1.5 <= self._ratio(m, c) <= 2.5

    def test_holds_off_equilibrium(self, terminal_scalar):
        m, c = terminal_scalar
        zero = InvestorControl.zero(m)
        assert 1.5 <= self._ratio(m, c, investor=zero) <= 2.5

    def test_rejects_unknown_mode(self, terminal_scalar):
        m, c = terminal_scalar
        with pytest.raises(ValueError):
            appendix_identity_check(m, SimulationSpec(10, 10, 1), c, quadratic_variation="exact")

    def test_piecewise_rate_still_exact(self):
        m = scalar_oracle_model(rho=0.1, rate=RateSchedule((0.0, 0.41), (0.01, 0.05)))
        c = solve_coefficients(m, 500)
        pair = strategy_pair(c, m)
        rep = appendix_identity_check(m, SimulationSpec(100, 37, 2), c, pair.investor, pair.market)
        assert rep.max_rel_discrepancy <= 1e-12
