"""Exception types raised across the package."""


class BranchcoalError(Exception):
    """Base class for package errors."""


class ParameterError(BranchcoalError, ValueError):
    """A parameter lies outside its valid range."""


class HorizonError(BranchcoalError, ValueError):
    """A request reaches beyond a precomputed horizon."""


class RejectionBudgetExceeded(BranchcoalError, RuntimeError):
    """A rejection sampler ran out of attempts.

    Usually means the acceptance probability is too small for rejection to
    be practical and a direct construction should be used instead.
    """


class NumericalError(BranchcoalError, ArithmeticError):
    """Quadrature, root finding or series evaluation failed to converge."""


class MalformedDrawError(BranchcoalError, ValueError):
    """A sampled (level, multiplicity) pair violates its contract."""


class InconsistentTrajectoryError(BranchcoalError, ValueError):
    """Recorded chain values disagree with the states that produced them."""
