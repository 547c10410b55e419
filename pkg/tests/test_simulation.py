import numpy as np
import pytest

from conftest import make_model, scalar_oracle_model
from oracles import euler_moments, gaussian_moments
from rsgame.controls import InvestorControl, MarketControls
from rsgame.equilibrium import strategy_pair
from rsgame.errors import SimulationError
from rsgame.kernels import KERNELS
from rsgame.model import RateSchedule, is_mmm_stable
from rsgame.riccati import solve_coefficients
from rsgame.simulation import (
    SimulationSpec,
    brownian_increments,
    combined_density_check,
    density_eta_xi,
    density_h,
    mean_se,
    simulate,
    simulate_factor,
    simulate_wealth,
)

FIELDS = ("XT", "log_V", "log_density_eta_xi", "log_density_h", "int_g",
          "log_density_combined", "int_generator", "qv_correction")
TERMINAL = ([[0.5]], [0.3])


def _same(b1, b2):
    return all(np.array_equal(getattr(b1, f), getattr(b2, f)) for f in FIELDS)


@pytest.fixture(scope="module")
def model2():
    return make_model(np.random.default_rng(11), m=2, n=2)


@pytest.fixture(scope="module")
def terminal_scalar():
    m = scalar_oracle_model(rho=0.15)
    return m, solve_coefficients(m, 2000, terminal=TERMINAL)


class TestSpec:
    @pytest.mark.parametrize("kw", [dict(n_paths=0), dict(n_steps=0), dict(seed=-1),
                                    dict(measure="risk-neutral"), dict(refine=0)])
    def test_rejects(self, kw):
        base = dict(n_paths=10, n_steps=10, seed=1)
        base.update(kw)
        with pytest.raises(ValueError):
            SimulationSpec(**base)

    def test_market_measure_needs_controls(self, scalar_model):
        with pytest.raises(ValueError, match="market controls"):
            simulate(scalar_model, SimulationSpec(10, 10, 1, measure="market"))

    def test_full_measure_needs_investor(self, scalar_model):
        with pytest.raises(ValueError, match="investor"):
            simulate(scalar_model, SimulationSpec(10, 10, 1, measure="full"), MarketControls.mmm(scalar_model))


class TestReproducibility:
    def test_same_seed_bitwise(self, model2):
        spec = SimulationSpec(300, 40, 7, measure="market")
        mk = MarketControls.mmm(model2)
        assert _same(simulate(model2, spec, mk), simulate(model2, spec, mk))

    def test_different_seed_differs(self, model2):
        b1 = simulate(model2, SimulationSpec(50, 10, 1))
        b2 = simulate(model2, SimulationSpec(50, 10, 2))
        assert not np.array_equal(b1.XT, b2.XT)

    @pytest.mark.parametrize("workers", [2, 5])
    def test_worker_count_irrelevant(self, model2, workers):
        spec = SimulationSpec(1000, 20, 3, measure="market", chunk_size=128)
        mk = MarketControls.mmm(model2)
        inv = InvestorControl.constant(model2, [0.4, -0.2])
        assert _same(simulate(model2, spec, mk, inv), simulate(model2, spec.with_(workers=workers), mk, inv))

    def test_paths_independent_of_run_size(self, model2):
        small = simulate(model2, SimulationSpec(10, 20, 3, chunk_size=4))
        large = simulate(model2, SimulationSpec(100, 20, 3, chunk_size=64))
        assert np.array_equal(small.XT, large.XT[:10])

    @pytest.mark.skipif("compiled" not in KERNELS, reason="compiled extension not built")
    @pytest.mark.parametrize("measure", ["physical", "market", "full"])
    def test_backend_parity(self, measure):
        m = make_model(np.random.default_rng(2), m=2, n=3)
        c = solve_coefficients(m, 200, terminal=(0.2 * np.eye(3), np.ones(3)))
        pair = strategy_pair(c, m)
        spec = SimulationSpec(200, 30, 9, measure=measure)
        py = simulate(m, spec.with_(backend="python"), pair.market, pair.investor, c)
        cy = simulate(m, spec.with_(backend="compiled"), pair.market, pair.investor, c)
        for f in FIELDS:
            a, b = getattr(py, f), getattr(cy, f)
            assert np.allclose(a, b, rtol=1e-11, atol=1e-11), f

    def test_refined_increments_sum_fine_draws(self):
        coarse = brownian_increments(5, [0, 3], 10, 2, 0.1, refine=2)
        fine = brownian_increments(5, [0, 3], 20, 2, 0.05, refine=1)
        assert np.allclose(coarse, fine.reshape(2, 10, 2, 2).sum(axis=2), rtol=0, atol=1e-15)


class TestFactor:
    def test_no_noise_matches_matrix_exponential(self, model2):
        m = model2.with_(Lambda=np.zeros_like(model2.Lambda))
        exact, _ = gaussian_moments(m.b, m.B, m.Lambda, m.x0, m.T)
        errs = []
        for steps in (50, 100, 200):
            XT = simulate_factor(m, SimulationSpec(3, steps, 1)).XT
            assert np.ptp(XT, axis=0).max() == 0.0
            errs.append(np.abs(XT[0] - exact).max())
        assert errs[2] < 1.0 / 200 and 1.7 < errs[0] / errs[1] < 2.3

    def test_full_measure_with_zero_h_equals_market(self, model2):
        mk = MarketControls.mmm(model2)
        spec = SimulationSpec(200, 25, 4, measure="market")
        a = simulate(model2, spec, mk, InvestorControl.zero(model2))
        b = simulate(model2, spec.with_(measure="full"), mk, InvestorControl.zero(model2))
        assert np.array_equal(a.XT, b.XT) and np.array_equal(a.log_V, b.log_V)

    def test_gaussian_moments(self, model2):
        steps, n = 50, 20000
        XT = simulate_factor(model2, SimulationSpec(n, steps, 21)).XT
        mean, cov = euler_moments(model2.b, model2.B, model2.Lambda, model2.x0, model2.T, steps)
        se_mean = np.sqrt(np.diag(cov) / n)
        assert np.all(np.abs(XT.mean(axis=0) - mean) <= 3 * se_mean)
        centred = XT - XT.mean(axis=0)
        for i in range(2):
            for j in range(2):
                prod = centred[:, i] * centred[:, j]
                assert abs(prod.mean() - cov[i, j]) <= 3 * prod.std(ddof=1) / np.sqrt(n)
        # and the Euler chain is within O(step) of the continuous-time law
        exact_mean, exact_cov = gaussian_moments(model2.b, model2.B, model2.Lambda, model2.x0, model2.T)
        assert np.abs(mean - exact_mean).max() < 5.0 / steps
        assert np.abs(cov - exact_cov).max() < 5.0 / steps

    def test_stationary_mean_under_mmm(self):
        m = scalar_oracle_model(rho=0.15, T=50.0, x0=[2.0], rate=RateSchedule.constant(0.02))
        stab = is_mmm_stable(m)
        assert stab.stable
        XT = simulate_factor(m, SimulationSpec(10_000, 500, 8, measure="market"), MarketControls.mmm(m)).XT[:, 0]
        est = mean_se(XT)
        assert abs(est.z(stab.stationary_mean[0])) <= 3


class TestWealth:
    def test_money_market(self, model2):
        b = simulate_wealth(model2, SimulationSpec(20, 37, 2), InvestorControl.zero(model2))
        ref = np.log(model2.v) + model2.rate.integral(0, model2.T)
        assert np.abs(b.log_V - ref).max() <= 1e-14

    def test_positive_with_large_positions(self, model2):
        inv = InvestorControl.constant(model2, [40.0, -35.0])
        b = simulate_wealth(model2, SimulationSpec(500, 50, 2), inv)
        assert np.all(b.V > 0)

    @pytest.mark.parametrize("measure", ["physical", "market"])
    def test_log_increments_recomputed(self, model2, measure):
        m = model2
        inv = InvestorControl.constant(m, [0.7, -0.4])
        mk = MarketControls.mmm(m) if measure == "market" else MarketControls.zero(m)
        b = simulate_wealth(m, SimulationSpec(5, 40, 6, measure=measure, store_paths=True), inv, mk)
        times = b.times
        rates = m.rate.mean_rates(times)
        h = np.array([0.7, -0.4])
        for p in range(5):
            logv = np.log(m.v)
            for k in range(40):
                dt, x, r = times[k + 1] - times[k], b.X[p, k], rates[k]
                eta, xi = mk(times[k], r)
                tilde = m.a + m.A @ x - r - m.Sigma @ (eta.T @ x + xi)
                logv += (r + h @ tilde - 0.5 * h @ m.Sigma @ m.Sigma.T @ h) * dt + h @ m.Sigma @ b.dW[p, k]
            assert np.exp(logv) == pytest.approx(b.V[p], rel=1e-12)


class TestDensities:
    def test_zero_controls_give_unit_density(self, model2):
        d = density_eta_xi(model2, SimulationSpec(100, 20, 1), MarketControls.zero(model2))
        assert np.all(d == 1.0)

    def test_zero_h_gives_unit_density(self, model2):
        spec = SimulationSpec(100, 20, 1, measure="market")
        d = density_h(model2, spec, InvestorControl.zero(model2), MarketControls.mmm(model2))
        assert np.all(d == 1.0)

    def test_unit_mean_for_bounded_controls(self, model2):
        mk = MarketControls.constant(0.5 * np.ones((2, 4)), [0.3, -0.2, 0.1, 0.0])
        est = mean_se(density_eta_xi(model2, SimulationSpec(100_000, 50, 17), mk))
        assert abs(est.z(1.0)) <= 3

    def test_mmm_density_pathwise(self, model2):
        m = model2
        b = simulate(m, SimulationSpec(8, 30, 4, store_paths=True), MarketControls.mmm(m))
        rates = m.rate.mean_rates(b.times)
        S = m.Sigma.T @ np.linalg.inv(m.Sigma @ m.Sigma.T)
        for p in range(8):
            log_d = 0.0
            for k in range(30):
                dt = b.times[k + 1] - b.times[k]
                theta_k = S @ (m.a + m.A @ b.X[p, k] - rates[k])
                log_d += -theta_k @ b.dW[p, k] - 0.5 * theta_k @ theta_k * dt
            assert abs(log_d - b.log_density_eta_xi[p]) <= 1e-10

    def test_log_density_h_linear_in_small_theta(self, model2):
        spec = SimulationSpec(50, 20, 3, measure="market")
        inv = InvestorControl.constant(model2, [0.5, 0.5])
        mk = MarketControls.mmm(model2)
        slopes = [simulate(model2.with_(theta=th), spec, mk, inv).log_density_h / th for th in (1e-3, 2e-3)]
        assert np.abs(slopes[0] - slopes[1]).max() < 1e-2 * np.abs(slopes[0]).max()

    def test_equilibrium_h_density_unit_mean(self, terminal_scalar):
        m, c = terminal_scalar
        pair = strategy_pair(c, m)
        d = density_h(m, SimulationSpec(100_000, 50, 31, measure="market"), pair.investor, pair.market)
        assert abs(mean_se(d).z(1.0)) <= 3

    def test_girsanov_first_and_second_moment(self):
        m = scalar_oracle_model(rho=0.15)
        mk = MarketControls.constant([[0.6, -0.3]], [0.2, 0.1])
        spec = SimulationSpec(100_000, 50, 5)
        phys = simulate(m, spec, mk)
        mkt = simulate(m, spec.with_(measure="market", seed=6), mk)
        w = np.exp(phys.log_density_eta_xi)
        for f in (lambda x: x, lambda x: x * x):
            lhs, rhs = mean_se(w * f(phys.XT[:, 0])), mean_se(f(mkt.XT[:, 0]))
            assert abs(lhs.mean - rhs.mean) <= 3 * np.hypot(lhs.se, rhs.se)


class TestCombinedDensity:
    def test_trivial_case_exact(self, model2):
        m = model2.with_(Lambda=np.zeros_like(model2.Lambda))
        c = solve_coefficients(m, 50)
        rep = combined_density_check(m, SimulationSpec(500, 20, 1), c)
        assert rep.mean == 1.0 and rep.se == 0.0 and rep.passed

    def test_oracle_scalar_model(self, terminal_scalar):
        m, c = terminal_scalar
        rep = combined_density_check(m, SimulationSpec(100_000, 50, 12), c)
        assert rep.passed and rep.n_flagged == 0 and not rep.tail_warning

    def test_heavy_tails_are_flagged_not_failed(self):
        m = scalar_oracle_model(rho=0.25, theta=6.0, Lambda=[[0.25, 2.0]])
        c = solve_coefficients(m, 500, terminal=([[0.5]], [2.0]))
        rep = combined_density_check(m, SimulationSpec(2000, 50, 3), c)
        assert rep.tail_warning


class TestFlaggedPolicy:
    def _exploding(self):
        return scalar_oracle_model(B=[[400.0]], T=10.0, Lambda=[[0.0, 0.0]])

    def test_run_fails_when_too_many_flagged(self):
        with pytest.raises(SimulationError, match="non-finite"):
            simulate(self._exploding(), SimulationSpec(20, 400, 1))

    def test_flagged_paths_counted_and_excluded(self):
        b = simulate(self._exploding(), SimulationSpec(20, 400, 1), max_flagged_fraction=1.0)
        assert b.n_flagged == 20 and b.valid(b.XT).size == 0
