"""Exception hierarchy shared by the toolkit.

The CLI maps these onto exit codes: ``ValidationError`` -> 1,
``NumericalError`` -> 2, ``OSError`` -> 3.
"""


class IcskewError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(IcskewError, ValueError):
    """Invalid input value, configuration or file contents."""


class DomainError(ValidationError):
    """Argument outside the domain of a physical formula."""


class IncompleteTableError(ValidationError):
    """A pair table is missing entries that the operation needs."""

    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = list(missing)


class NumericalError(IcskewError):
    """A numerical procedure failed (fit, quadrature, resampling)."""


class NoFeatureError(NumericalError):
    """No dip or peak stands out of the counting noise."""


class DegenerateFitError(NumericalError):
    """The fitted feature collapsed (e.g. width below the grid step)."""


class ConvergenceError(NumericalError):
    """Iteration limit reached; ``last_params`` holds the final iterate."""

    def __init__(self, message, last_params=None, n_iter=0):
        super().__init__(message)
        self.last_params = last_params
        self.n_iter = n_iter
