"""Exception hierarchy shared by all modules."""


class TwoCusumError(Exception):
    """Base class for errors raised by this package."""


class DomainError(TwoCusumError, ValueError):
    """An argument lies outside the domain of a formula."""


class RangeError(TwoCusumError, OverflowError):
    """An exponential would overflow; ``exponent`` is the offending argument."""

    def __init__(self, message: str, exponent: float) -> None:
        super().__init__(message)
        self.exponent = exponent


class InputError(TwoCusumError, ValueError):
    """An observation is malformed (non-finite increment, bad time step)."""


class EstimationError(TwoCusumError, RuntimeError):
    """A Monte Carlo extrapolation did not behave; carries the grid values."""

    def __init__(self, message: str, grid: tuple, values: tuple) -> None:
        super().__init__(message)
        self.grid = grid
        self.values = values


class SearchError(TwoCusumError, RuntimeError):
    """The false-alarm constraint cannot be met inside the search box."""
