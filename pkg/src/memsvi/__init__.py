"""Numerical laboratory for an electrostatic MEMS membrane resting on a rigid plate.

The deflection u satisfies the obstacle u >= -1, and the voltage acts through
g_W(u) = 1 / (2 (1 + u + W)^2) with dielectric thickness W > 0.
"""

from .core import (
    ConvergenceError,
    DielectricSpec,
    Field,
    Grid,
    InvariantViolation,
    MemsviError,
    SolverConfig,
    classify_state,
    discrete_energy,
    g_w,
)
from .lcp import LcpProblem, assemble_laplacian, brute_force_obstacle, pdas, psor, solve_obstacle
from .stationary import lambda_z_bisect, monotone_stationary
from .evolution import euler_step, evolve, penalty_evolve, penalty_step

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "DielectricSpec",
    "Field",
    "Grid",
    "InvariantViolation",
    "MemsviError",
    "SolverConfig",
    "classify_state",
    "discrete_energy",
    "g_w",
    "LcpProblem",
    "assemble_laplacian",
    "brute_force_obstacle",
    "pdas",
    "psor",
    "solve_obstacle",
    "lambda_z_bisect",
    "monotone_stationary",
    "euler_step",
    "evolve",
    "penalty_evolve",
    "penalty_step",
]
