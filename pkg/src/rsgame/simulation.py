"""Monte Carlo simulation of factor, wealth and density processes.

Paths are simulated under one of three measures:

``physical``  the reference measure, factor drift ``b + BX``;
``market``    the measure defined by market controls, drift ``b + BX - Lambda phi``
              with ``phi = eta'X + xi'``;
``full``      additionally tilted by the investor, drift gaining
              ``-(theta/2) Lambda Sigma' h``.

The market measure has density ``exp(-int phi'dW - int |phi|^2 dt / 2)`` with
respect to the physical one, so ``W + int phi dt`` is a Brownian motion under it;
this is the sign that produces the tilted factor drift above.

Whatever the simulation measure, the kernel reconstructs the physical and
market Brownian increments, so every accumulator is available on every run.
Each path draws its Gaussian increments from a counter-based Philox stream
keyed by ``(seed, path index)``; paths are processed in fixed-size chunks, so
results do not depend on the number of workers.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np

from . import _kernel_py
from .controls import InvestorControl, MarketControls
from .errors import SimulationError
from .kernels import get_kernel
from .model import MarketModel, require_valid
from .riccati import ValueCoefficients, coefficient_rates

__all__ = [
    "MEASURES",
    "SimulationSpec",
    "PathBundle",
    "MCEstimate",
    "DensityReport",
    "brownian_increments",
    "simulate",
    "simulate_chunks",
    "simulate_factor",
    "simulate_wealth",
    "density_eta_xi",
    "density_h",
    "combined_density_check",
    "mean_se",
]

MEASURES = {"physical": 0, "market": 1, "full": 2}
MAX_FLAGGED_FRACTION = 1e-3
_CHUNK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class SimulationSpec:
    n_paths: int
    n_steps: int
    seed: int
    measure: str = "physical"
    workers: int = 1
    refine: int = 1  # Brownian sub-increments per step; the fine draws are summed
    store_paths: bool = False
    chunk_size: int = 4096
    backend: str | None = None

    def __post_init__(self):
        if self.n_paths < 1 or self.n_steps < 1:
            raise ValueError("n_paths and n_steps must be >= 1")
        if self.measure not in MEASURES:
            raise ValueError(f"measure must be one of {sorted(MEASURES)}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.refine < 1 or self.workers < 1 or self.chunk_size < 1:
            raise ValueError("refine, workers and chunk_size must be >= 1")

    def with_(self, **changes) -> "SimulationSpec":
        return replace(self, **changes)


@dataclass
class PathBundle:
    """Terminal accumulators per path (and optionally the full factor paths)."""

    times: np.ndarray
    measure: str
    XT: np.ndarray
    log_V: np.ndarray
    log_density_eta_xi: np.ndarray
    log_density_h: np.ndarray
    int_g: np.ndarray
    log_density_combined: np.ndarray
    int_generator: np.ndarray
    qv_correction: np.ndarray
    flagged: np.ndarray
    path_index: np.ndarray
    X: np.ndarray | None = None
    dW: np.ndarray | None = None

    @property
    def n_paths(self) -> int:
        return len(self.log_V)

    @property
    def n_flagged(self) -> int:
        return int(self.flagged.sum())

    def valid(self, values: np.ndarray) -> np.ndarray:
        return values[~self.flagged]

    @property
    def V(self) -> np.ndarray:
        return np.exp(self.log_V)


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    se: float
    n: int

    def z(self, target: float) -> float:
        return _zscore(self.mean - target, self.se)


@dataclass(frozen=True)
class DensityReport:
    estimate: MCEstimate
    n_flagged: int
    passed: bool
    tail_warning: bool = False

    @property
    def mean(self) -> float:
        return self.estimate.mean

    @property
    def se(self) -> float:
        return self.estimate.se


def _zscore(diff: float, se: float, tol: float = 1e-12) -> float:
    if se > 0:
        return diff / se
    return 0.0 if abs(diff) <= tol else float(np.copysign(np.inf, diff))


def mean_se(values) -> MCEstimate:
    values = np.asarray(values, dtype=float)
    n = len(values)
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
    return MCEstimate(mean, se, n)


def brownian_increments(seed: int, path_ids, n_steps: int, d: int, dt: float, refine: int = 1) -> np.ndarray:
    """Increments of shape ``(len(path_ids), n_steps, d)`` for uniform step ``dt``.

    Path ``i`` always draws the same ``n_steps * refine`` standard normals, so a
    run with ``(n, refine=2)`` and one with ``(2n, refine=1)`` share one
    Brownian path.
    """
    path_ids = np.asarray(path_ids)
    out = np.empty((len(path_ids), n_steps, d))
    fine = np.sqrt(dt / refine)
    for row, i in enumerate(path_ids):
        gen = np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 0, int(i)]))
        z = gen.standard_normal((n_steps * refine, d))
        if refine > 1:
            z = z.reshape(n_steps, refine, d).sum(axis=1)
        out[row] = z * fine
    return out


def _tables(model: MarketModel, times, rates, market, investor, coeffs):
    N = len(times) - 1
    n, m, d = model.n, model.m, model.d
    eta = np.zeros((N, n, d))
    xi = np.zeros((N, d))
    h0 = np.zeros((N, m))
    H1 = np.zeros((N, m, n))
    Qt = np.zeros((N, n, n))
    qt = np.zeros((N, n))
    dQt = np.zeros((N, n, n))
    dqt = np.zeros((N, n))
    dkt = np.zeros(N)
    LL = model.Lambda @ model.Lambda.T
    for k in range(N):
        t, r = times[k], rates[k]
        if market is not None:
            eta[k], xi[k] = market(t, r)
        if investor is not None:
            h0[k], H1[k] = investor.affine(t, r)
        if coeffs is not None:
            Qt[k], qt[k], kk = coeffs.at(t)
            dQt[k], dqt[k], dkt[k] = coeffs.derivative_at(t)
            r_node = coeffs.rate_at(t)
            if r != r_node:
                # The step straddles a rate breakpoint.  The time derivatives are
                # affine in the rate, so shift them to the step-mean rate that
                # the rest of the step uses.
                lo = coefficient_rates(model, Qt[k], qt[k], kk, r_node)
                hi = coefficient_rates(model, Qt[k], qt[k], kk, r)
                dqt[k] += hi[1] - lo[1]
                dkt[k] += hi[2] - lo[2]
    halftr = 0.5 * np.einsum("ij,kij->k", LL, Qt)
    return dict(eta=eta, xi=xi, h0=h0, H1=H1, Qt=Qt, qt=qt, dQt=dQt, dqt=dqt, dkt=dkt, halftr=halftr)


def _chunk_bounds(spec: SimulationSpec, d: int):
    per_path = spec.n_steps * spec.refine * d
    size = max(1, min(spec.chunk_size, _CHUNK_ELEMENTS // max(per_path, 1)))
    return [(lo, min(lo + size, spec.n_paths)) for lo in range(0, spec.n_paths, size)]


def _run_chunk(model, spec, times, rates, tables, x0, lo, hi, cache=None):
    n, d = model.n, model.d
    N = len(times) - 1
    dt = np.diff(times)
    key = (spec.seed, lo, hi, N, d, float(dt[0]), spec.refine)
    dW = None if cache is None else cache.get(key)
    if dW is None:
        dW = brownian_increments(spec.seed, np.arange(lo, hi), N, d, dt[0], spec.refine)
        if cache is not None:
            cache[key] = dW
    P = hi - lo
    XT = np.empty((P, n))
    acc = np.empty((P, _kernel_py.N_ACC))
    X = np.empty((P, N + 1, n)) if spec.store_paths else None
    kernel = get_kernel(spec.backend)
    with np.errstate(over="ignore", invalid="ignore"):
        kernel(
            dW, dt, x0, rates, tables["eta"], tables["xi"], tables["h0"], tables["H1"],
            tables["Qt"], tables["qt"], tables["dQt"], tables["dqt"], tables["dkt"], tables["halftr"],
            model.a, model.A, model.b, model.B, model.Sigma, model.Lambda,
            model.theta, MEASURES[spec.measure], XT, acc, X,
        )
    flagged = ~(np.all(np.isfinite(XT), axis=1) & np.all(np.isfinite(acc), axis=1))
    return PathBundle(
        times=times,
        measure=spec.measure,
        XT=XT,
        log_V=np.log(model.v) + acc[:, _kernel_py.ACC_LOGV],
        log_density_eta_xi=acc[:, _kernel_py.ACC_LOGD_MKT],
        log_density_h=acc[:, _kernel_py.ACC_LOGD_H],
        int_g=acc[:, _kernel_py.ACC_INT_G],
        log_density_combined=acc[:, _kernel_py.ACC_LOGD_COMB],
        int_generator=acc[:, _kernel_py.ACC_INT_AU],
        qv_correction=acc[:, _kernel_py.ACC_QV],
        flagged=flagged,
        path_index=np.arange(lo, hi),
        X=X,
        dW=dW if spec.store_paths else None,
    )


def simulate_chunks(
    model: MarketModel,
    spec: SimulationSpec,
    market: MarketControls | None = None,
    investor: InvestorControl | None = None,
    coeffs: ValueCoefficients | None = None,
    t0: float = 0.0,
    x0=None,
    cache: dict | None = None,
) -> Iterator[PathBundle]:
    """Yield path chunks in path-index order.

    The time grid is ``n_steps`` uniform steps on ``[t0, T]``; the rate on each
    step is its exact average, so ``int r dt`` is reproduced exactly.
    ``cache`` is an optional dict shared between runs that reuse the same
    increments (common random numbers); it trades memory for generator time.
    """
    require_valid(model)
    if spec.measure != "physical" and market is None:
        raise ValueError(f"measure {spec.measure!r} requires market controls")
    if spec.measure == "full" and investor is None:
        raise ValueError("measure 'full' requires an investor control")
    if not 0.0 <= t0 < model.T:
        raise ValueError(f"t0={t0} outside [0, T)")
    times = np.linspace(t0, model.T, spec.n_steps + 1)
    rates = model.rate.mean_rates(times)
    x0 = np.array(model.x0 if x0 is None else x0, dtype=float).reshape(model.n)
    tables = _tables(model, times, rates, market, investor, coeffs)
    bounds = _chunk_bounds(spec, model.d)

    def work(b):
        return _run_chunk(model, spec, times, rates, tables, x0, *b, cache=cache)

    if spec.workers == 1:
        for b in bounds:
            yield work(b)
    else:
        with ThreadPoolExecutor(max_workers=spec.workers) as pool:
            yield from pool.map(work, bounds)


def _concat(chunks: list[PathBundle]) -> PathBundle:
    first = chunks[0]
    if len(chunks) == 1:
        return first
    arrays = {}
    for name in ("XT", "log_V", "log_density_eta_xi", "log_density_h", "int_g",
                 "log_density_combined", "int_generator", "qv_correction", "flagged", "path_index"):
        arrays[name] = np.concatenate([getattr(c, name) for c in chunks])
    for name in ("X", "dW"):
        arrays[name] = None if first.X is None else np.concatenate([getattr(c, name) for c in chunks])
    return PathBundle(times=first.times, measure=first.measure, **arrays)


def simulate(model, spec, market=None, investor=None, coeffs=None, t0=0.0, x0=None,
             cache=None, max_flagged_fraction=MAX_FLAGGED_FRACTION) -> PathBundle:
    """Run all chunks and enforce the flagged-path policy."""
    bundle = _concat(list(simulate_chunks(model, spec, market, investor, coeffs, t0, x0, cache)))
    if bundle.n_flagged > max_flagged_fraction * bundle.n_paths:
        raise SimulationError(
            f"{bundle.n_flagged} of {bundle.n_paths} paths non-finite "
            f"(limit {max_flagged_fraction:.2%})"
        )
    return bundle


def simulate_factor(model, spec, market=None, investor=None, **kw) -> PathBundle:
    """Factor paths under the measure named by ``spec.measure``."""
    return simulate(model, spec, market, investor, **kw)


def simulate_wealth(model, spec, investor, market=None, **kw) -> PathBundle:
    """Wealth paths, simulated in log space so ``V > 0`` always."""
    if spec.measure == "physical" and market is None:
        market = MarketControls.zero(model)
    return simulate(model, spec, market, investor, **kw)


def density_eta_xi(model, spec, market: MarketControls, **kw) -> np.ndarray:
    """Per-path ``dP^{eta,xi}/dP`` on paths simulated under the physical measure."""
    if spec.measure != "physical":
        raise ValueError("density_eta_xi needs paths under the physical measure")
    bundle = simulate(model, spec, market, None, **kw)
    return np.exp(bundle.valid(bundle.log_density_eta_xi))


def density_h(model, spec, investor: InvestorControl, market: MarketControls, **kw) -> np.ndarray:
    """Per-path ``dP^{h,eta,xi}/dP^{eta,xi}`` on paths simulated under the market measure."""
    if spec.measure != "market":
        raise ValueError("density_h needs paths under the market measure")
    bundle = simulate(model, spec, market, investor, **kw)
    return np.exp(bundle.valid(bundle.log_density_h))


def combined_density_check(model, spec, coeffs, investor=None, market=None, n_se: float = 3.0,
                           tail_ratio: float = 0.05, **kw) -> DensityReport:
    """Monte Carlo mean of the combined exponential driven by ``(Q X + q)'Lambda + h'Sigma``.

    Defaults to the equilibrium controls built from ``coeffs``.  The run passes
    when the mean is within ``n_se`` standard errors of one; a relative
    standard error above ``tail_ratio`` raises the heavy-tail flag instead of
    being treated as a failure.
    """
    from .equilibrium import strategy_pair

    if investor is None or market is None:
        pair = strategy_pair(coeffs, model)
        investor = investor or pair.investor
        market = market or pair.market
    spec = spec.with_(measure="market")
    bundle = simulate(model, spec, market, investor, coeffs, **kw)
    est = mean_se(np.exp(bundle.valid(bundle.log_density_combined)))
    passed = abs(est.mean - 1.0) <= n_se * est.se or est.se == 0.0 and est.mean == 1.0
    return DensityReport(est, bundle.n_flagged, bool(passed), tail_warning=est.se > tail_ratio)
