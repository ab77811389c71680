"""Krein strings, jumping-in diffusions, and their scaling limits.

Numerical calculus for strings (speed measures) on (0, inf), eigenfunctions
of the associated generalized second-order operators, Laplace exponents of
inverse local times, Monte Carlo simulation of the excursion construction,
and a deterministic harness that checks limit-theorem hypotheses along
gamma sweeps.
"""

__version__ = "0.1.0"

from .errors import (
    BudgetError,
    ConditioningError,
    DivergenceError,
    DomainError,
    IndeterminacyError,
    JindiffError,
    NonConvergenceError,
    OverflowGuardError,
    ParameterError,
    SpecFileError,
    VerificationError,
)

__all__ = [
    "__version__",
    "BudgetError",
    "ConditioningError",
    "DivergenceError",
    "DomainError",
    "IndeterminacyError",
    "JindiffError",
    "NonConvergenceError",
    "OverflowGuardError",
    "ParameterError",
    "SpecFileError",
    "VerificationError",
]
