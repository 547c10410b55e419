"""Risk-sensitive asset management as a zero-sum stochastic differential game.

Solve the value-function coefficients, build the saddle-point strategies,
classify the market's equilibrium measure and check it all by Monte Carlo.
"""
from .errors import (
    ConfigError,
    DomainError,
    ModelParameterError,
    ModelStructureError,
    NumericalError,
    RiccatiBlowUpError,
    RSGameError,
    SimulationError,
)
from .kernels import BACKEND
from .model import (
    MarketModel,
    RateSchedule,
    excess_return,
    is_mmm_stable,
    load_model,
    mmm_controls,
    mmm_drift_matrix,
    running_cost_g,
    validate_model,
)
from .controls import InvestorControl, MarketControls
from .riccati import ValueCoefficients, grad_u, k0_matrix, k1_matrix, solve_coefficients, value_u
from .equilibrium import (
    StrategyPair,
    classify_equilibrium,
    first_order_h,
    hjb_operator,
    optimal_h,
    optimal_market_controls,
    strategy_pair,
    verification_conditions,
)
from .simulation import SimulationSpec, simulate
from .game import appendix_identity_check, criterion_J, criterion_J_tilde, saddle_probe, u_tilde_estimate

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DomainError",
    "ModelParameterError",
    "ModelStructureError",
    "NumericalError",
    "RiccatiBlowUpError",
    "RSGameError",
    "SimulationError",
    "BACKEND",
    "MarketModel",
    "RateSchedule",
    "excess_return",
    "is_mmm_stable",
    "load_model",
    "mmm_controls",
    "mmm_drift_matrix",
    "running_cost_g",
    "validate_model",
    "InvestorControl",
    "MarketControls",
    "ValueCoefficients",
    "grad_u",
    "k0_matrix",
    "k1_matrix",
    "solve_coefficients",
    "value_u",
    "StrategyPair",
    "classify_equilibrium",
    "first_order_h",
    "hjb_operator",
    "optimal_h",
    "optimal_market_controls",
    "strategy_pair",
    "verification_conditions",
    "SimulationSpec",
    "simulate",
    "appendix_identity_check",
    "criterion_J",
    "criterion_J_tilde",
    "saddle_probe",
    "u_tilde_estimate",
]
