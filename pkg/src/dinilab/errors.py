"""Exception types shared across the package."""


class DiniLabError(Exception):
    """Base class for all package errors."""


class DomainError(DiniLabError, ValueError):
    """An argument lies outside the domain of the operation."""


class OutOfRangeError(DiniLabError, ValueError):
    """A requested value is outside the range of a modulus."""


class InvariantError(DiniLabError):
    """A structural invariant (monotonicity, positivity, ...) was violated."""


class SandwichViolation(DiniLabError):
    """``C^-1 rho <= sigma <= C rho`` fails at a sample point.

    The offending point is kept in :attr:`witness`.
    """

    def __init__(self, witness, message):
        super().__init__(message)
        self.witness = witness


class ConvergenceError(DiniLabError):
    """An iterative method stopped before meeting its tolerance."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class InconclusiveError(DiniLabError):
    """A finite computation cannot certify the requested quantity."""


class ConfigError(DiniLabError, ValueError):
    """An experiment configuration failed validation."""
