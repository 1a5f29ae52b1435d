"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: usage-type errors exit 1, numerical
failures exit 2, size-cap violations exit 3.
"""


class WipError(Exception):
    """Base class for all package errors."""


class InputError(WipError, ValueError):
    """An argument violates a documented precondition."""


class ConfigurationError(WipError, ValueError):
    """Inconsistent experiment or run configuration."""


class TruncationError(WipError, RuntimeError):
    """An iteration cap was hit before the computation finished."""

    def __init__(self, message, cap):
        super().__init__(f"{message} (cap={cap})")
        self.cap = cap


class NumericalError(WipError, ArithmeticError):
    """A numerical procedure failed to converge."""


class DivergenceError(NumericalError):
    """A series failed to decay; carries the last two term norms."""

    def __init__(self, message, last_norms):
        super().__init__(f"{message}; last term norms {last_norms[0]:.3e}, {last_norms[1]:.3e}")
        self.last_norms = tuple(last_norms)


class FitError(NumericalError):
    """A regression was ill-posed (too few rows, collinear regressors)."""


class SizeError(WipError, ValueError):
    """Problem size exceeds a solver cap."""
