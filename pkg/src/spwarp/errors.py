"""Exception hierarchy shared across the package."""


class SpwarpError(Exception):
    """Base class for all package errors."""


class DomainError(SpwarpError, ValueError):
    """An argument lies outside the domain of the operation."""


class InvalidArgumentError(SpwarpError, ValueError):
    """An argument is malformed (non-finite, wrong shape, ...)."""


class NumericalError(SpwarpError, ArithmeticError):
    """A numerical routine produced non-finite values or failed to bracket."""


class TemplateError(SpwarpError):
    """A template could not be constructed with the requested stationary points."""


class OptimizationError(SpwarpError):
    """Every optimizer start failed.

    ``diagnostics`` holds one entry per start.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = list(diagnostics or [])


class ConfigError(SpwarpError):
    """A run configuration is invalid.

    ``details`` lists ``{"field", "message"}`` entries when available.
    """

    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = list(details or [])


class DataError(SpwarpError):
    """Input data could not be ingested."""
