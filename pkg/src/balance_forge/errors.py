"""Exception hierarchy.

Errors fall in three buckets that the CLI maps to exit codes: bad argument
values (``DomainError``), bad input data (``DataError`` subclasses) and
computations that could not complete (``ComputationError`` subclasses).
"""


class BalanceForgeError(Exception):
    """Base class for every error raised by this package."""


class DomainError(BalanceForgeError, ValueError):
    """A parameter lies outside the range an operation accepts."""


class DataError(BalanceForgeError):
    """Input data is malformed or unusable."""


class ParseError(DataError):
    pass


class ShapeError(DataError):
    pass


class DegenerateCovariate(DataError):
    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"covariate column {column} has zero variance")


class SingularCovariance(DataError):
    pass


class ComputationError(BalanceForgeError):
    pass


class ThresholdNotMet(ComputationError):
    """Rerandomization ran out of attempts; ``best`` holds the best draw seen."""

    def __init__(self, message, best=None, attempts=0):
        self.best = best
        self.attempts = attempts
        super().__init__(message)


class TooLarge(ComputationError):
    pass


class RankError(ComputationError):
    pass


class BracketError(ComputationError):
    pass
