"""Exception hierarchy shared by every module."""


class MaxEntError(Exception):
    """Base class for all library errors."""


class DomainError(MaxEntError, ValueError):
    """Input lies outside the domain of an operation (infeasible marginal, bad graph, ...)."""


class NumericalError(MaxEntError, ArithmeticError):
    """A factorization or interpolation became too ill-conditioned to trust."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConvergenceError(MaxEntError):
    """An iterative method ran out of budget before certifying its result.

    ``best`` carries the best iterate/report found so far.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class BudgetError(ConvergenceError):
    """An enumeration or outer loop exceeded its hard budget."""


class IntegrityError(MaxEntError):
    """Internal consistency check failed (e.g. facet system does not describe the support)."""


class ValidationError(MaxEntError, ValueError):
    """An instance violates a stated invariant."""


class ParseError(ValidationError):
    """An instance file does not follow the schema."""

    def __init__(self, message, field=None):
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class CounterexampleError(MaxEntError):
    """An empirical check contradicted a proven bound; ``dump`` holds the full instance."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}
