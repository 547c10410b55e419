import numpy as np
import pytest

from rsgame.model import MarketModel, RateSchedule


def make_model(rng, m=2, n=2, theta=1.0, T=1.0, independent=False, stable=True, rate=None, **over):
    """Random well-posed model; ``independent`` forces Sigma Lambda' = 0."""
    d = n + m
    Sigma = 0.3 * rng.standard_normal((m, d))
    Lambda = 0.3 * rng.standard_normal((n, d))
    if independent:
        Sigma[:, m:] = 0.0
        Lambda[:, :m] = 0.0
        Sigma[:, :m] += 0.3 * np.eye(m)
    B = 0.2 * rng.standard_normal((n, n)) - (1.0 if stable else -0.5) * np.eye(n)
    kw = dict(
        a=rng.normal(0.05, 0.02, m),
        A=0.3 * rng.standard_normal((m, n)),
        b=0.1 * rng.standard_normal(n),
        B=B,
        Sigma=Sigma,
        Lambda=Lambda,
        rate=rate or RateSchedule((0.0, 0.37 * T), (0.02, 0.035)),
        theta=theta,
        T=T,
        v=float(rng.uniform(0.5, 2.0)),
        x0=0.3 * rng.standard_normal(n),
    )
    kw.update(over)
    return MarketModel(**kw)


def scalar_oracle_model(rho=0.0, **over):
    """The one-factor, one-asset reference model used throughout the tests."""
    kw = dict(
        a=[0.06], A=[[0.8]], b=[0.0], B=[[-0.5]],
        Sigma=[[0.2, 0.0]], Lambda=[[rho, 0.3]],
        rate=RateSchedule.constant(0.02), theta=1.0, T=1.0, v=1.0, x0=[0.5],
    )
    kw.update(over)
    return MarketModel(**kw)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def scalar_model():
    return scalar_oracle_model()


@pytest.fixture
def correlated_scalar():
    return scalar_oracle_model(rho=0.15)


# Lines recorded by test_acceptance.py, repeated in a block at the end of the run.
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
