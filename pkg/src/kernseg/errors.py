"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input outside the domain of an operation."""


class ValidationError(ValueError):
    """A constructed object failed a numerical validity check."""


class ParseError(ValueError):
    """Malformed file content.

    Parameters
    ----------
    message : str
        What went wrong.
    offset : int
        Byte offset in the input at which the problem was detected.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class SolverError(RuntimeError):
    """Iterative solver exhausted its budget; ``best`` holds the best iterate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class DegenerateClusterError(RuntimeError):
    """A cluster Gram has a zero leading eigenvalue."""


class DegenerateDataError(ValueError):
    """Training data cannot support the requested model (e.g. all samples identical)."""


class NumericalError(RuntimeError):
    """Non-finite values appeared during an iterative computation."""
