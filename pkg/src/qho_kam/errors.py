"""Exception types shared across the package."""


class QhoKamError(Exception):
    """Base class for all package errors."""


class SpecError(QhoKamError, ValueError):
    """Invalid input or configuration (violated precondition)."""


class DomainError(SpecError):
    """Argument outside the mathematical domain of an operation."""


class CapacityError(QhoKamError):
    """A quadrature rule is too small for the requested integrand class."""


class AccuracyError(QhoKamError):
    """A numerical result failed its internal accuracy check.

    Attributes
    ----------
    residual : float
        Estimated error that triggered the failure.
    """

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class ResonanceError(QhoKamError):
    """A small divisor fell below its admissible lower bound.

    Attributes
    ----------
    k : tuple of int
        Fourier mode of the worst violation.
    j, l : int
        Mode pair (1-based).
    channel : str
        Quadratic channel of the violation.
    value : float
        Divisor value.
    bound : float
        Lower bound it violated.
    """

    def __init__(self, k, j, l, channel, value, bound):
        self.k = tuple(int(v) for v in k)
        self.j = int(j)
        self.l = int(l)
        self.channel = channel
        self.value = float(value)
        self.bound = float(bound)
        super().__init__(
            f"small divisor |{value:.3e}| < {bound:.3e} at k={self.k}, "
            f"(j, l)=({self.j}, {self.l}), channel {channel}"
        )


class BudgetError(QhoKamError):
    """Truncation or memory budget exceeded."""

    def __init__(self, message, tail=float("nan")):
        super().__init__(message)
        self.tail = tail


class StepTooLargeError(QhoKamError):
    """Generator too large for a reliable matrix-exponential flow."""


class EmptyParameterSet(QhoKamError):
    """Every frequency sample has been excised."""
