"""Exception hierarchy shared by all covselect modules."""


class CovselectError(Exception):
    """Base class for every error raised by this package."""


class InputError(CovselectError, ValueError):
    """A caller violated a documented precondition (bad shape, bad label set,
    out-of-range parameter, missing configuration)."""


class ValidationError(InputError):
    """Data failed a structural or numerical validity check (asymmetric or
    non-positive-definite matrix, malformed covset file)."""


class NumericalError(CovselectError, RuntimeError):
    """A numerical routine failed outright (eigensolver breakdown,
    non-finite values appearing mid-computation)."""


class ConvergenceError(NumericalError):
    """An iterative solver ran out of iterations.

    Carries the last iterate and the residual it stalled at so callers can
    inspect or accept the partial result.
    """

    def __init__(self, message, last_iterate=None, residual=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual
