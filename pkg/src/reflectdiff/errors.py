"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the requested function."""


class ConfigurationError(ValueError):
    """A numerical scheme was configured with inconsistent parameters."""


class SingularParameterError(ArithmeticError):
    """A closed-form expression hit a vanishing denominator."""


class InversionAccuracyError(ArithmeticError):
    """Numerical Laplace inversion did not reach the requested tolerance.

    The achieved error estimate and the best available value are kept on
    the exception so callers can decide whether to use it anyway.
    """

    def __init__(self, message: str, value: float, error_estimate: float):
        super().__init__(message)
        self.value = value
        self.error_estimate = error_estimate


class ConvergenceError(ArithmeticError):
    """An iterative solver stopped without meeting its tolerance."""

    def __init__(self, message: str, iterations: int, residual: float):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual
