"""Exception hierarchy shared by every ofbm module."""


class OfbmError(Exception):
    """Root of all errors raised by the toolkit."""

    exit_code = 1


class InvalidInputError(OfbmError, ValueError):
    """Malformed argument: non-finite matrix, wrong shape, mismatched grids."""

    exit_code = 2


class DomainError(InvalidInputError):
    """Argument outside the mathematical domain of the operation."""


class ConfigError(InvalidInputError):
    """Settings file or run configuration could not be parsed or validated."""


class NumericalFailure(OfbmError, ArithmeticError):
    """An iterative or quadrature procedure did not reach its tolerance."""

    exit_code = 3

    def __init__(self, message, achieved_error=None):
        super().__init__(message)
        self.achieved_error = achieved_error


class NotPositiveSemidefiniteError(NumericalFailure):
    """Cholesky factorization failed at every jitter level."""


class InvalidModelError(OfbmError):
    """An OfbmSpec failed validation where a valid model is required."""

    exit_code = 4

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
