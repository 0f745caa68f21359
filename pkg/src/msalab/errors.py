"""Exception types shared across the package."""


class MsaLabError(Exception):
    """Base class for all package errors."""


class ValidationError(MsaLabError, ValueError):
    """A parameter or configuration violates a stated constraint."""


class DomainError(MsaLabError, ValueError):
    """An input lies outside the domain of an operation (e.g. not acceptable')."""


class ResolventBlowUp(MsaLabError, ArithmeticError):
    """The energy sits on (or numerically at) an eigenvalue; the resolvent norm is infinite."""


class SolverError(MsaLabError, RuntimeError):
    """An eigen-solver or linear solve failed to converge."""


class IncompatibleScales(ValidationError):
    """No admissible covering ratio exists for the requested pair of scales."""

    def __init__(self, message, nearest=None):
        super().__init__(message)
        self.nearest = nearest


class InsufficientRange(MsaLabError, ValueError):
    """Too few usable shells to fit an exponential decay rate."""
