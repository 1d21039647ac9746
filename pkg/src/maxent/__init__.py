"""Certified dual solvers for maximum-entropy distributions over discrete supports."""

from maxent.dual import SolveOptions, SolveReport, radius_bound, solve_dual
from maxent.errors import (
    BudgetError,
    ConvergenceError,
    CounterexampleError,
    DomainError,
    IntegrityError,
    MaxEntError,
    NumericalError,
    ParseError,
    ValidationError,
)
from maxent.oracles import ExplicitOracle, ProductFormOracle, SpanningTreeOracle
from maxent.support import FacetSystem, facets_from_support

__version__ = "0.1.0"

__all__ = [
    "BudgetError", "ConvergenceError", "CounterexampleError", "DomainError", "ExplicitOracle",
    "FacetSystem", "IntegrityError", "MaxEntError", "NumericalError", "ParseError",
    "ProductFormOracle", "SolveOptions", "SolveReport", "SpanningTreeOracle", "ValidationError",
    "facets_from_support", "radius_bound", "solve_dual",
]
