"""Investor and market control representations.

Market controls ``(eta(t), xi(t))`` are deterministic; investor controls are
affine feedback ``h(t, x) = h0(t) + H1(t) x``.  Both are evaluated with an
explicit short rate so the simulator can pass the step-averaged rate it also
uses in the excess return.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import MarketModel

__all__ = ["MarketControls", "InvestorControl", "check_bounded"]

TimeRateFn = Callable[[float, float], np.ndarray]


@dataclass(frozen=True)
class MarketControls:
    eta: TimeRateFn  # (t, r) -> (n, n+m)
    xi: TimeRateFn  # (t, r) -> (n+m,)
    label: str = "custom"

    def __call__(self, t: float, r: float):
        return np.asarray(self.eta(t, r), dtype=float), np.asarray(self.xi(t, r), dtype=float).reshape(-1)

    @classmethod
    def zero(cls, model: MarketModel) -> "MarketControls":
        eta = np.zeros((model.n, model.d))
        xi = np.zeros(model.d)
        return cls(lambda t, r: eta, lambda t, r: xi, "zero")

    @classmethod
    def constant(cls, eta, xi, label="constant") -> "MarketControls":
        eta = np.asarray(eta, dtype=float)
        xi = np.asarray(xi, dtype=float).reshape(-1)
        return cls(lambda t, r: eta, lambda t, r: xi, label)

    @classmethod
    def mmm(cls, model: MarketModel) -> "MarketControls":
        """Controls whose measure is the minimal martingale measure."""
        S = model.sigma_pinv.T
        eta = model.A.T @ S
        return cls(lambda t, r: eta, lambda t, r: (model.a - r) @ S, "mmm")

    def perturbed(self, E, F, eps: float) -> "MarketControls":
        E = np.asarray(E, dtype=float)
        F = np.asarray(F, dtype=float).reshape(-1)
        return MarketControls(
            lambda t, r: self.eta(t, r) + eps * E,
            lambda t, r: self.xi(t, r) + eps * F,
            f"{self.label}+{eps:g}",
        )


@dataclass(frozen=True)
class InvestorControl:
    h0: TimeRateFn  # (t, r) -> (m,)
    H1: TimeRateFn  # (t, r) -> (m, n)
    label: str = "custom"

    def affine(self, t: float, r: float):
        return np.asarray(self.h0(t, r), dtype=float).reshape(-1), np.asarray(self.H1(t, r), dtype=float)

    def __call__(self, t: float, x, r: float) -> np.ndarray:
        h0, H1 = self.affine(t, r)
        return h0 + H1 @ np.asarray(x, dtype=float)

    def budget_weight(self, t: float, x, r: float) -> float:
        """Riskless weight ``h0 = 1 - sum(h)``."""
        return 1.0 - float(np.sum(self(t, x, r)))

    @classmethod
    def zero(cls, model: MarketModel) -> "InvestorControl":
        h0 = np.zeros(model.m)
        H1 = np.zeros((model.m, model.n))
        return cls(lambda t, r: h0, lambda t, r: H1, "zero")

    @classmethod
    def constant(cls, model: MarketModel, h, label="constant") -> "InvestorControl":
        h = np.asarray(h, dtype=float).reshape(model.m)
        H1 = np.zeros((model.m, model.n))
        return cls(lambda t, r: h, lambda t, r: H1, label)

    def perturbed(self, direction, eps: float) -> "InvestorControl":
        direction = np.asarray(direction, dtype=float).reshape(-1)
        return InvestorControl(lambda t, r: self.h0(t, r) + eps * direction, self.H1, f"{self.label}+{eps:g}")


def check_bounded(model: MarketModel, times, market: MarketControls | None = None,
                  investor: InvestorControl | None = None, radius: float = 10.0) -> dict[str, float]:
    """Grid proxies for admissibility.

    Returns the max spectral norm of ``eta`` and Euclidean norm of ``xi`` over
    ``times``, and the max of ``h' Sigma Sigma' h`` over ``times`` and the
    corners of a factor box of half-width ``radius`` (``h`` is affine, so its
    extremes on a box sit at corners).
    """
    out = {}
    if market is not None:
        e = [market(t, model.r(t)) for t in times]
        out["eta_max"] = max(float(np.linalg.norm(E, 2)) for E, _ in e)
        out["xi_max"] = max(float(np.linalg.norm(F)) for _, F in e)
    if investor is not None:
        n = model.n
        corners = radius * np.array(np.meshgrid(*[[-1.0, 1.0]] * n)).reshape(n, -1).T
        worst = 0.0
        for t in times:
            h0, H1 = investor.affine(t, model.r(t))
            sh = (h0 + corners @ H1.T) @ model.Sigma
            worst = max(worst, float(np.einsum("ij,ij->i", sh, sh).max()))
        out["hSSh_max"] = worst
    return out
