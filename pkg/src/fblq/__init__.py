"""Solver and verification lab for fully coupled forward-backward LQ control.

The package computes the decoupling blocks (P1, P2, P3) and offsets of the
coupled Hamiltonian system three independent ways, synthesizes the optimal
state feedback, and verifies optimality and the block-algebra identities
numerically via ODE integration and Monte Carlo simulation.
"""

__version__ = "0.1.0"

from .errors import (
    ConstraintViolatedError,
    DivergedError,
    DomainError,
    FBLQError,
    ParseError,
    PreconditionError,
    SingularCoefficientError,
)
from .model import CoefficientFunction, CoeffSnapshot, FBLQProblem, eval_coeffs, validate
from .odes import MatrixPath, OdeSystem, TimeGrid, integrate_terminal, interpolate

__all__ = [
    "CoefficientFunction",
    "CoeffSnapshot",
    "ConstraintViolatedError",
    "DivergedError",
    "DomainError",
    "FBLQError",
    "FBLQProblem",
    "MatrixPath",
    "OdeSystem",
    "ParseError",
    "PreconditionError",
    "SingularCoefficientError",
    "TimeGrid",
    "eval_coeffs",
    "integrate_terminal",
    "interpolate",
    "validate",
]
