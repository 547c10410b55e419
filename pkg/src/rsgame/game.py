"""Monte Carlo estimates of the game criteria and saddle-point diagnostics.

Criteria of the form ``-(2/theta) log E[Y]`` are estimated by the plug-in log
of the sample mean, computed in log space (shift by the largest log-weight)
so large exponents do not overflow, with a delta-method standard error
``(2/|theta|) sd(Y) / (sqrt(n) mean(Y))``.

When the coefficients were solved with non-zero terminal data ``(Q_T, q_T)``,
the criteria include the matching terminal payoff ``x'Q_T x/2 + q_T'x`` so the
closed form ``u(0, x0)`` still applies.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .controls import InvestorControl, MarketControls
from .equilibrium import strategy_pair
from .errors import SimulationError
from .model import MarketModel
from .riccati import ValueCoefficients, value_u
from .simulation import PathBundle, SimulationSpec, _zscore, simulate

__all__ = [
    "BoundCheck",
    "GameValueReport",
    "ProbeRow",
    "ProbeReport",
    "IdentityReport",
    "criterion_J",
    "criterion_J_tilde",
    "u_tilde_estimate",
    "saddle_probe",
    "appendix_identity_check",
    "RISK_SEEKING_WARNING",
]

RISK_SEEKING_WARNING = "risk-seeking: heavy-tail warning"


@dataclass(frozen=True)
class BoundCheck:
    lower: float
    upper: float
    margin: float  # distance to the nearer bound, in units of the estimate
    passed: bool
    asserted: bool  # False for theta < 0 or h = 0, where the check is reported only


@dataclass
class GameValueReport:
    quantity: str
    estimate: float
    std_error: float
    n_paths: int
    closed_form: float = float("nan")
    bound_check: BoundCheck | None = None
    n_flagged: int = 0
    warnings: list[str] = field(default_factory=list)

    @property
    def z_score(self) -> float:
        if np.isnan(self.closed_form):
            return float("nan")
        return _zscore(self.estimate - self.closed_form, self.std_error,
                       tol=1e-12 * (1.0 + abs(self.closed_form)))

    def within(self, n_se: float = 3.0) -> bool:
        return abs(self.z_score) <= n_se

    def csv_row(self) -> list[str]:
        return [self.quantity, *(repr(float(v)) for v in (self.estimate, self.std_error, self.closed_form, self.z_score))]


def _check_theta(model: MarketModel) -> list[str]:
    if model.theta < 0:
        warnings.warn(RISK_SEEKING_WARNING, RuntimeWarning, stacklevel=3)
        return [RISK_SEEKING_WARNING]
    return []


def _log_mean_exp(w: np.ndarray):
    """``(log mean exp(w), sd(exp(w)) / mean(exp(w)))`` computed without overflow."""
    if len(w) == 0:
        raise SimulationError("no valid paths to estimate from")
    shift = w.max()
    y = np.exp(w - shift)
    mean = y.mean()
    rel_sd = y.std(ddof=1) / mean if len(y) > 1 else np.inf
    return shift + np.log(mean), rel_sd


def _terminal_payoff(coeffs: ValueCoefficients | None, XT: np.ndarray) -> np.ndarray:
    if coeffs is None:
        return np.zeros(len(XT))
    QT, qT = coeffs.Q[-1], coeffs.q[-1]
    if not (QT.any() or qT.any()):
        return np.zeros(len(XT))
    return 0.5 * np.einsum("pi,ij,pj->p", XT, QT, XT) + XT @ qT


def _criterion_from_paths(model, bundle: PathBundle, coeffs, quantity: str) -> GameValueReport:
    th = model.theta
    ok = ~bundle.flagged
    payoff = bundle.log_V[ok] + _terminal_payoff(coeffs, bundle.XT[ok])
    lme, rel_sd = _log_mean_exp(-0.5 * th * payoff)
    n = int(ok.sum())
    est = -(2.0 / th) * lme
    se = (2.0 / abs(th)) * rel_sd / np.sqrt(n)
    closed = value_u(coeffs, 0.0, model.x0) if coeffs is not None else float("nan")
    return GameValueReport(quantity, float(est), float(se), n, closed, n_flagged=bundle.n_flagged)


def criterion_J(model: MarketModel, spec: SimulationSpec, investor: InvestorControl,
                coeffs: ValueCoefficients | None = None, **kw) -> GameValueReport:
    """Risk-sensitive growth criterion with wealth simulated under the physical measure."""
    notes = _check_theta(model)
    bundle = simulate(model, spec.with_(measure="physical"), MarketControls.zero(model), investor, coeffs, **kw)
    rep = _criterion_from_paths(model, bundle, coeffs, "J")
    rep.warnings += notes
    return rep


def _controls(model, coeffs, investor, market):
    if investor is None or market is None:
        if coeffs is None:
            raise ValueError("give coeffs or both investor and market controls")
        pair = strategy_pair(coeffs, model)
        investor = investor or pair.investor
        market = market or pair.market
    return investor, market


def criterion_J_tilde(model: MarketModel, spec: SimulationSpec, coeffs: ValueCoefficients | None = None,
                      investor: InvestorControl | None = None, market: MarketControls | None = None,
                      **kw) -> GameValueReport:
    """Game criterion with wealth simulated under the market-tilted measure.

    Defaults to the equilibrium controls of ``coeffs``; the closed form is
    ``u(0, x0)``.
    """
    notes = _check_theta(model)
    investor, market = _controls(model, coeffs, investor, market)
    bundle = simulate(model, spec.with_(measure="market"), market, investor, coeffs, **kw)
    rep = _criterion_from_paths(model, bundle, coeffs, "J_tilde")
    rep.warnings += notes
    return rep


def u_tilde_estimate(model: MarketModel, spec: SimulationSpec, coeffs: ValueCoefficients | None = None,
                     investor: InvestorControl | None = None, market: MarketControls | None = None,
                     t: float = 0.0, x=None, **kw) -> GameValueReport:
    """Exponentially transformed criterion from ``(t, x)`` under the fully tilted measure.

    Estimates ``E[exp((theta/2) int_t^T g ds) v^{-theta/2}]`` (times the terminal
    payoff factor when present); the closed form is ``exp(-(theta/2) u(t, x))``.
    The bound report compares against ``(0, exp(-(theta/2) int_t^T r) v^{-theta/2})``
    and requires the estimate to clear the upper bound by three standard
    errors (and by 1e-12 relative when the standard error is zero).
    """
    notes = _check_theta(model)
    investor, market = _controls(model, coeffs, investor, market)
    x = np.array(model.x0 if x is None else x, dtype=float)
    bundle = simulate(model, spec.with_(measure="full"), market, investor, coeffs, t0=t, x0=x, **kw)
    th = model.theta
    ok = ~bundle.flagged
    w = 0.5 * th * (bundle.int_g[ok] - np.log(model.v) - _terminal_payoff(coeffs, bundle.XT[ok]))
    lme, rel_sd = _log_mean_exp(w)
    est = float(np.exp(lme))
    se = float(est * rel_sd / np.sqrt(ok.sum()))
    closed = float(np.exp(-0.5 * th * value_u(coeffs, t, x))) if coeffs is not None else float("nan")

    upper = float(np.exp(-0.5 * th * model.rate.integral(t, model.T)) * model.v ** (-0.5 * th))
    margin = min(est, upper - est) / upper
    passed = est > 0 and upper - est > max(3.0 * se, 1e-12 * upper)
    # The strict bound is claimed for theta > 0 and a non-zero investor
    # position; otherwise it is reported but not asserted.  Sigma has full row
    # rank, so a non-zero h shows up as a non-zero log D_h on some path.
    active = bool(np.any(bundle.log_density_h[ok] != 0.0))
    rep = GameValueReport("u_tilde", est, se, int(ok.sum()), closed,
                          BoundCheck(0.0, upper, float(margin), bool(passed), th > 0 and active),
                          bundle.n_flagged, notes)
    return rep


# ---------------------------------------------------------------------------
# saddle probes


@dataclass(frozen=True)
class ProbeRow:
    side: str  # "investor" or "market"
    direction: int
    eps: float
    delta: float  # J_tilde(perturbed) - J_tilde(equilibrium)
    se: float
    violation: bool


@dataclass
class ProbeReport:
    base: GameValueReport
    rows: list[ProbeRow]
    n_se: float

    @property
    def n_violations(self) -> int:
        return sum(r.violation for r in self.rows)

    @property
    def passed(self) -> bool:
        return self.n_violations == 0

    @property
    def continuity_constant(self) -> float:
        """Largest ``|delta| / eps`` over non-null perturbations."""
        vals = [abs(r.delta) / r.eps for r in self.rows if r.eps > 0]
        return max(vals, default=0.0)


def _paired_delta(th, w1, w0):
    """Difference of two plug-in criteria on common paths, with delta-method SE."""
    shift = max(w1.max(), w0.max())
    y1, y0 = np.exp(w1 - shift), np.exp(w0 - shift)
    m1, m0 = y1.mean(), y0.mean()
    delta = -(2.0 / th) * (np.log(m1) - np.log(m0))
    grad = np.array([1.0 / m1, -1.0 / m0]) * (2.0 / abs(th))
    cov = np.cov(np.vstack([y1, y0]), ddof=1) / len(y1)
    var = float(grad @ cov @ grad)
    return float(delta), float(np.sqrt(max(var, 0.0)))


def saddle_probe(model: MarketModel, spec: SimulationSpec, coeffs: ValueCoefficients,
                 n_directions: int = 20, eps=(0.05, 0.1, 0.2), n_se: float = 3.0,
                 direction_seed: int = 0) -> ProbeReport:
    """Perturb each player's equilibrium control and re-estimate the game criterion.

    Every run reuses the same Brownian increments.  An investor deviation is a
    violation when it raises the criterion by more than ``n_se`` paired
    standard errors; a market deviation is a violation when it lowers it by
    more than that.
    """
    th = model.theta
    pair = strategy_pair(coeffs, model)
    spec = spec.with_(measure="market")
    cache: dict = {}

    def run(investor, market):
        b = simulate(model, spec, market, investor, coeffs, cache=cache)
        if b.n_flagged:
            raise SimulationError(f"{b.n_flagged} flagged paths in a probe run")
        return -0.5 * th * (b.log_V + _terminal_payoff(coeffs, b.XT)), b

    w0, b0 = run(pair.investor, pair.market)
    base = _criterion_from_paths(model, b0, coeffs, "J_tilde")
    rng = np.random.default_rng(direction_seed)
    rows = []
    for j in range(n_directions):
        dh = rng.standard_normal(model.m)
        dh /= np.linalg.norm(dh)
        E = rng.standard_normal((model.n, model.d))
        F = rng.standard_normal(model.d)
        scale = np.sqrt(np.sum(E**2) + np.sum(F**2))
        E, F = E / scale, F / scale
        for e in eps:
            w1, _ = run(pair.investor.perturbed(dh, e), pair.market)
            dlt, se = _paired_delta(th, w1, w0)
            rows.append(ProbeRow("investor", j, float(e), dlt, se, dlt > n_se * se + 1e-12))
            w1, _ = run(pair.investor, pair.market.perturbed(E, F, e))
            dlt, se = _paired_delta(th, w1, w0)
            rows.append(ProbeRow("market", j, float(e), dlt, se, dlt < -(n_se * se + 1e-12)))
    return ProbeReport(base, rows, n_se)


# ---------------------------------------------------------------------------
# pathwise Ito identity


@dataclass(frozen=True)
class IdentityReport:
    n_steps: int
    max_rel_discrepancy: float
    mean_abs_log_discrepancy: float
    quadratic_variation: str


def appendix_identity_check(model: MarketModel, spec: SimulationSpec, coeffs: ValueCoefficients,
                            investor: InvestorControl | None = None, market: MarketControls | None = None,
                            quadratic_variation: str = "realized") -> IdentityReport:
    """Per-path discrepancy of the exponential Ito identity for ``chi = -(theta/2) u``.

    Left side: ``chi(T, X_T) + (theta/2) int g + log D_h``.  Right side:
    ``chi(0, x) - (theta/2) int A u + log D_comb`` where ``D_comb`` is the
    stochastic exponential driven by ``-(theta/2)(Lambda' Du + Sigma' h)``.
    With ``quadratic_variation="realized"`` the discretized ``int A u`` uses
    the realized ``dX' D2u dX / 2`` in place of ``tr(Lambda Lambda' D2u) dt / 2``;
    the two discretizations share a limit, but the realized form removes the
    order-1/2 quadratic-variation noise from the identity.
    Paths are simulated under the market-tilted measure.
    """
    if quadratic_variation not in ("realized", "expected"):
        raise ValueError("quadratic_variation must be 'realized' or 'expected'")
    investor, market = _controls(model, coeffs, investor, market)
    b = simulate(model, spec.with_(measure="market"), market, investor, coeffs)
    ok = ~b.flagged
    th = model.theta
    XT = b.XT[ok]
    uT = 0.5 * np.einsum("pi,ij,pj->p", XT, coeffs.Q[-1], XT) + XT @ coeffs.q[-1] + coeffs.k[-1]
    lhs = -0.5 * th * uT + 0.5 * th * b.int_g[ok] + b.log_density_h[ok]
    gen = b.int_generator[ok]
    if quadratic_variation == "realized":
        gen = gen + b.qv_correction[ok]
    rhs = -0.5 * th * value_u(coeffs, 0.0, model.x0) - 0.5 * th * gen + b.log_density_combined[ok]
    diff = lhs - rhs
    return IdentityReport(
        spec.n_steps,
        float(np.abs(np.expm1(diff)).max()),
        float(np.abs(diff).mean()),
        quadratic_variation,
    )
