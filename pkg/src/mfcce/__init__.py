"""Moderated (coarse correlated) equilibria for linear-quadratic mean field
games: grid numerics, Riccati systems, scenario-law flows, equilibrium
verdicts, Monte Carlo confirmation, and the emission-abatement application."""

__version__ = "0.1.0"

from .grids import DEFAULT_STEPS, TimeGrid, Trajectory, integrate_backward, integrate_forward, quadrature
from .model import InitialLaw, LQModelSpec, running_payoff, terminal_payoff, validate
from .riccati import solve_deviation, solve_mfc, solve_ne
from .flows import (
    CorrelatedFlow,
    ScenarioLaw,
    analytic_payoff,
    build_flow,
    consistency_residual,
)
from .conditions import CceVerdict, check_optimality, check_outperformance, deterministic_cce_probe, evaluate
from .abatement import (
    AbatementParams,
    LinearFlowLaw,
    gl_verdict,
    linear_class_coefficients,
    map_to_lq,
    maximal_payoff_cce,
    outperformance_region,
)
from .montecarlo import SimConfig, SimReport, simulate_deviation, simulate_flow

__all__ = [
    "DEFAULT_STEPS",
    "TimeGrid",
    "Trajectory",
    "integrate_forward",
    "integrate_backward",
    "quadrature",
    "InitialLaw",
    "LQModelSpec",
    "validate",
    "running_payoff",
    "terminal_payoff",
    "solve_deviation",
    "solve_ne",
    "solve_mfc",
    "ScenarioLaw",
    "CorrelatedFlow",
    "build_flow",
    "analytic_payoff",
    "consistency_residual",
    "CceVerdict",
    "check_optimality",
    "check_outperformance",
    "deterministic_cce_probe",
    "evaluate",
    "AbatementParams",
    "LinearFlowLaw",
    "map_to_lq",
    "linear_class_coefficients",
    "gl_verdict",
    "outperformance_region",
    "maximal_payoff_cce",
    "SimConfig",
    "SimReport",
    "simulate_flow",
    "simulate_deviation",
]
