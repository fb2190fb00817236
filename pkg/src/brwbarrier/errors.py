"""Exception types shared across the package."""


class BRWError(Exception):
    """Base class for all package errors."""

    exit_code = 2


class DomainError(BRWError, ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class UnsupportedLaw(BRWError, TypeError):
    """The operation does not support this offspring law variant."""


class SizeLimit(BRWError):
    """Exact enumeration would exceed the configured size bound."""


class DegenerateFit(BRWError):
    """Regression inputs do not determine a slope."""


class InsufficientHits(BRWError):
    """Too few raw successes for a naive estimate; use splitting instead."""

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class NumericalFailure(BRWError, ArithmeticError):
    exit_code = 3


class ToleranceNotMet(NumericalFailure):
    """Adaptive step control collapsed before the requested accuracy."""


class Unclassified(NumericalFailure):
    """Neither blow-down nor cube-root growth was established by the safety horizon."""


class ConfigError(BRWError):
    exit_code = 1
