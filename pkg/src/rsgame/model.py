"""Market/factor model, running cost and minimal-martingale-measure objects.

Dynamics (physical measure, ``d = n + m`` Brownian drivers)::

    dS_i / S_i = (a + A X)_i dt + (Sigma dW)_i
    dX         = (b + B X) dt + Lambda dW

The riskless rate ``r(t)`` is a deterministic piecewise-constant schedule.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Sequence

import numpy as np
from scipy import linalg

from .errors import (
    ConfigError,
    DomainError,
    ModelParameterError,
    ModelStructureError,
    NumericalError,
)

__all__ = [
    "RateSchedule",
    "MarketModel",
    "ValidationReport",
    "StabilityReport",
    "validate_model",
    "excess_return",
    "running_cost_g",
    "mmm_controls",
    "mmm_drift_matrix",
    "is_mmm_stable",
    "model_from_dict",
    "model_to_dict",
    "load_model",
]


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RateSchedule:
    """Left-continuous piecewise-constant short rate.

    ``r(t) = values[i]`` for ``t`` in ``(grid[i], grid[i+1]]`` and ``r(0) = values[0]``;
    the last value extends to the horizon.
    """

    grid: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(float(t) for t in np.ravel(self.grid)))
        object.__setattr__(self, "values", tuple(float(r) for r in np.ravel(self.values)))
        if len(self.grid) != len(self.values) or not self.grid:
            raise ModelStructureError("rate", "grid and values must be non-empty and of equal length")
        if self.grid[0] != 0.0:
            raise ModelStructureError("rate.grid", "must start at 0")
        if any(t1 <= t0 for t0, t1 in zip(self.grid, self.grid[1:])):
            raise ModelStructureError("rate.grid", "must be strictly increasing")
        if not all(math.isfinite(x) for x in (*self.grid, *self.values)):
            raise ModelStructureError("rate", "entries must be finite")

    @classmethod
    def constant(cls, r: float) -> "RateSchedule":
        return cls((0.0,), (float(r),))

    def __call__(self, t: float) -> float:
        i = int(np.searchsorted(self.grid, t, side="left")) - 1
        return self.values[max(i, 0)]

    def integral(self, t0: float, t1: float) -> float:
        """Exact ``int_{t0}^{t1} r(s) ds`` for ``t0 <= t1``."""
        if t1 < t0:
            return -self.integral(t1, t0)
        edges = np.append(np.asarray(self.grid), np.inf)
        total = 0.0
        for i, r in enumerate(self.values):
            lo, hi = max(t0, edges[i]), min(t1, edges[i + 1])
            if hi > lo:
                total += r * (hi - lo)
        return total

    def mean_rates(self, times: np.ndarray) -> np.ndarray:
        """Exact average rate over each interval ``[times[k], times[k+1]]``."""
        times = np.asarray(times, dtype=float)
        out = np.empty(len(times) - 1)
        for k in range(len(out)):
            out[k] = self.integral(times[k], times[k + 1]) / (times[k + 1] - times[k])
        return out

    def breakpoints(self, T: float) -> list[float]:
        return [t for t in self.grid[1:] if 0.0 < t < T]

    @property
    def is_constant(self) -> bool:
        return len(set(self.values)) == 1


@dataclass(frozen=True)
class MarketModel:
    a: np.ndarray
    A: np.ndarray
    b: np.ndarray
    B: np.ndarray
    Sigma: np.ndarray
    Lambda: np.ndarray
    rate: RateSchedule
    theta: float
    T: float
    v: float
    x0: np.ndarray

    def __post_init__(self):
        for name in ("a", "A", "b", "B", "Sigma", "Lambda", "x0"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "theta", float(self.theta))
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "v", float(self.v))
        _check_shapes(self)

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def n(self) -> int:
        return self.b.shape[0]

    @property
    def d(self) -> int:
        return self.n + self.m

    def r(self, t: float) -> float:
        return self.rate(t)

    # -- factorization-based helpers; (Sigma Sigma')^{-1} is never formed --

    @cached_property
    def _chol(self):
        try:
            return linalg.cho_factor(self.Sigma @ self.Sigma.T, lower=True)
        except linalg.LinAlgError as exc:
            raise NumericalError("Sigma Sigma' is not positive definite") from exc

    def solve_ss(self, rhs: np.ndarray) -> np.ndarray:
        """Return ``(Sigma Sigma')^{-1} rhs``."""
        return linalg.cho_solve(self._chol, rhs)

    @cached_property
    def sigma_pinv(self) -> np.ndarray:
        """``Sigma' (Sigma Sigma')^{-1}``, shape (d, m)."""
        return self.solve_ss(self.Sigma).T

    @cached_property
    def projector(self) -> np.ndarray:
        """Orthogonal projector ``Sigma' (Sigma Sigma')^{-1} Sigma`` onto the row space of Sigma."""
        P = self.sigma_pinv @ self.Sigma
        return 0.5 * (P + P.T)

    @cached_property
    def hedge_matrix(self) -> np.ndarray:
        """``Lambda Sigma' (Sigma Sigma')^{-1}``, shape (n, m)."""
        return self.Lambda @ self.sigma_pinv

    @property
    def independent_noise(self) -> bool:
        return bool(np.allclose(self.Sigma @ self.Lambda.T, 0.0, atol=1e-14))

    def with_(self, **changes) -> "MarketModel":
        fields_ = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields_.update(changes)
        return MarketModel(**fields_)


def _check_shapes(model: MarketModel) -> None:
    def expect(name, arr, shape):
        if arr.shape != shape:
            raise ModelStructureError(name, f"expected shape {shape}, got {arr.shape}")

    if model.a.ndim != 1 or model.a.shape[0] < 1:
        raise ModelStructureError("a", "must be a non-empty vector")
    if model.b.ndim != 1 or model.b.shape[0] < 1:
        raise ModelStructureError("b", "must be a non-empty vector")
    m, n = model.a.shape[0], model.b.shape[0]
    expect("A", model.A, (m, n))
    expect("B", model.B, (n, n))
    expect("Sigma", model.Sigma, (m, n + m))
    expect("Lambda", model.Lambda, (n, n + m))
    expect("x0", model.x0, (n,))


@dataclass
class ValidationReport:
    checks: list[tuple[str, bool, float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(passed for _, passed, _ in self.checks)

    def add(self, name: str, passed: bool, value: float) -> None:
        self.checks.append((name, bool(passed), float(value)))

    def failures(self) -> list[str]:
        return [name for name, passed, _ in self.checks if not passed]

    def __str__(self) -> str:
        lines = [f"{'PASS' if p else 'FAIL'}  {name} = {value:.6g}" for name, p, value in self.checks]
        return "\n".join(lines)


def validate_model(model: MarketModel, pd_tol: float = 1e-12) -> ValidationReport:
    """Check the standing assumptions of the model.

    Shape errors and an inadmissible risk-sensitivity raise; the remaining
    invariants are reported with the measured quantity.
    """
    _check_shapes(model)
    if model.theta == 0.0:
        raise ModelParameterError("theta must be nonzero")
    if not model.theta > -2.0:
        raise ModelParameterError(f"theta must exceed -2, got {model.theta}")

    report = ValidationReport()
    finite = all(
        np.all(np.isfinite(x)) for x in (model.a, model.A, model.b, model.B, model.Sigma, model.Lambda, model.x0)
    )
    report.add("finite_entries", finite, 1.0 if finite else 0.0)
    ss = model.Sigma @ model.Sigma.T
    lam_min = float(np.linalg.eigvalsh(0.5 * (ss + ss.T)).min()) if finite else float("nan")
    report.add("lambda_min(Sigma Sigma')", lam_min > pd_tol, lam_min)
    report.add("T", model.T > 0, model.T)
    report.add("v", model.v > 0, model.v)
    return report


def require_valid(model: MarketModel) -> MarketModel:
    report = validate_model(model)
    if not report.ok:
        raise ModelParameterError("model failed validation: " + ", ".join(report.failures()))
    return model


def _check_time(model: MarketModel, t: float) -> None:
    if not (0.0 <= t <= model.T):
        raise DomainError(f"t={t} outside [0, {model.T}]")


def excess_return(model: MarketModel, t: float, x: Sequence[float]) -> np.ndarray:
    """``delta(t, x) = a + A x - r(t) 1``."""
    _check_time(model, t)
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n,):
        raise ModelStructureError("x", f"expected shape ({model.n},), got {x.shape}")
    return model.a + model.A @ x - model.r(t)


def running_cost_g(model, x, h, eta_t, xi_t, r_t) -> float:
    """Running cost of the exponential-of-integral criterion.

    ``g = 1/2 (theta/2 + 1) h' Sigma Sigma' h - r - h' (delta - Sigma (eta' x + xi'))``
    with ``delta = a + A x - r 1``.
    """
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=float)
    eta_t = np.asarray(eta_t, dtype=float)
    xi_t = np.asarray(xi_t, dtype=float).reshape(-1)
    if h.shape != (model.m,):
        raise ModelStructureError("h", f"expected shape ({model.m},), got {h.shape}")
    if eta_t.shape != (model.n, model.d):
        raise ModelStructureError("eta", f"expected shape ({model.n}, {model.d}), got {eta_t.shape}")
    if xi_t.shape != (model.d,):
        raise ModelStructureError("xi", f"expected shape ({model.d},), got {xi_t.shape}")
    delta = model.a + model.A @ x - r_t
    phi = eta_t.T @ x + xi_t
    sh = model.Sigma.T @ h
    return float(0.5 * (0.5 * model.theta + 1.0) * sh @ sh - r_t - h @ (delta - model.Sigma @ phi))


def mmm_controls(model: MarketModel, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Market controls whose measure is the minimal martingale measure.

    Returns ``eta = A' (Sigma Sigma')^{-1} Sigma`` (n x d) and
    ``xi = (a - r(t) 1)' (Sigma Sigma')^{-1} Sigma`` (length d).
    """
    _check_time(model, t)
    S = model.sigma_pinv.T  # (Sigma Sigma')^{-1} Sigma, (m, d)
    eta = model.A.T @ S
    xi = (model.a - model.r(t)) @ S
    return eta, xi


def mmm_drift_matrix(model: MarketModel) -> np.ndarray:
    """Factor drift matrix under the minimal martingale measure, ``B - Lambda Sigma'(Sigma Sigma')^{-1} A``."""
    return model.B - model.hedge_matrix @ model.A


@dataclass(frozen=True)
class StabilityReport:
    eigenvalues: np.ndarray
    max_real: float
    stable: bool
    stationary_mean: np.ndarray | None
    rate: float


def is_mmm_stable(model: MarketModel, tol: float = 1e-9, rbar: float | None = None) -> StabilityReport:
    """Eigen-analysis of the MMM factor drift and, if stable, the long-run mean.

    ``rbar`` defaults to the time-average of ``r`` over ``[0, T]``.
    """
    Bt = mmm_drift_matrix(model)
    try:
        eig = np.linalg.eigvals(Bt)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("eigenvalue computation failed") from exc
    max_real = float(eig.real.max())
    stable = max_real < -tol
    if rbar is None:
        rbar = model.rate.integral(0.0, model.T) / model.T
    mean = None
    if stable:
        c = model.b - model.hedge_matrix @ (model.a - rbar)
        mean = -np.linalg.solve(Bt, c)
    return StabilityReport(eig, max_real, stable, mean, float(rbar))


# ---------------------------------------------------------------- config I/O

_MODEL_KEYS = ("m", "n", "a", "A", "b", "B", "Sigma", "Lambda", "theta", "T", "v", "x0", "rate")


def _as_number(value, where):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {type(value).__name__}")
    if not math.isfinite(value):
        raise ConfigError(f"{where}: non-finite number")
    return float(value)


def _as_vector(value, length, where):
    if not isinstance(value, list):
        raise ConfigError(f"{where}: expected an array of {length} numbers")
    if len(value) != length:
        raise ConfigError(f"{where}: expected length {length}, got {len(value)}")
    return [_as_number(x, f"{where}[{i}]") for i, x in enumerate(value)]


def _as_matrix(value, rows, cols, where):
    if not isinstance(value, list) or len(value) != rows:
        got = len(value) if isinstance(value, list) else type(value).__name__
        raise ConfigError(f"{where}: expected {rows} rows, got {got}")
    return [_as_vector(row, cols, f"{where}[{i}]") for i, row in enumerate(value)]


def model_from_dict(data: dict[str, Any]) -> MarketModel:
    """Build a model from the JSON-compatible schema, with field-precise errors."""
    if not isinstance(data, dict):
        raise ConfigError("model: expected an object")
    missing = [k for k in _MODEL_KEYS if k not in data]
    if missing:
        raise ConfigError("model: missing keys " + ", ".join(missing))
    m, n = data["m"], data["n"]
    for key, val in (("m", m), ("n", n)):
        if isinstance(val, bool) or not isinstance(val, int) or val < 1:
            raise ConfigError(f"{key}: expected an integer >= 1")
    d = n + m
    rate = data["rate"]
    if not isinstance(rate, dict) or "grid" not in rate or "values" not in rate:
        raise ConfigError("rate: expected an object with 'grid' and 'values'")
    if not isinstance(rate["grid"], list) or not rate["grid"]:
        raise ConfigError("rate.grid: expected a non-empty array")
    k = len(rate["grid"])
    try:
        schedule = RateSchedule(
            tuple(_as_vector(rate["grid"], k, "rate.grid")),
            tuple(_as_vector(rate["values"], k, "rate.values")),
        )
    except ModelStructureError as exc:
        raise ConfigError(str(exc)) from exc
    return MarketModel(
        a=_as_vector(data["a"], m, "a"),
        A=_as_matrix(data["A"], m, n, "A"),
        b=_as_vector(data["b"], n, "b"),
        B=_as_matrix(data["B"], n, n, "B"),
        Sigma=_as_matrix(data["Sigma"], m, d, "Sigma"),
        Lambda=_as_matrix(data["Lambda"], n, d, "Lambda"),
        rate=schedule,
        theta=_as_number(data["theta"], "theta"),
        T=_as_number(data["T"], "T"),
        v=_as_number(data["v"], "v"),
        x0=_as_vector(data["x0"], n, "x0"),
    )


def model_to_dict(model: MarketModel) -> dict[str, Any]:
    return {
        "m": model.m,
        "n": model.n,
        "a": model.a.tolist(),
        "A": model.A.tolist(),
        "b": model.b.tolist(),
        "B": model.B.tolist(),
        "Sigma": model.Sigma.tolist(),
        "Lambda": model.Lambda.tolist(),
        "theta": model.theta,
        "T": model.T,
        "v": model.v,
        "x0": model.x0.tolist(),
        "rate": {"grid": list(model.rate.grid), "values": list(model.rate.values)},
    }


def _reject_constant(token):
    raise ValueError(f"non-finite literal {token}")


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    try:
        return json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_model(path) -> MarketModel:
    with open(path, encoding="utf-8") as fh:
        data = parse_config_text(fh.read(), str(path))
    return model_from_dict(data.get("model", data) if isinstance(data, dict) else data)
