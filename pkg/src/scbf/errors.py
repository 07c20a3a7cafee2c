"""Exception types shared across the package."""


class SCBFError(Exception):
    """Base class for all package errors."""


class DomainError(SCBFError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class GridMismatchError(SCBFError, ValueError):
    """Fields living on different spectral grids were combined."""


class StepSizeError(SCBFError, ValueError):
    """The explicit absorption term violates the step-size guard."""

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


class IntegrationBlowupError(SCBFError, FloatingPointError):
    """The integrator produced non-finite values."""

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time
