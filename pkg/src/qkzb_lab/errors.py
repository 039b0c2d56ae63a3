"""Exception and warning types shared across the package."""


class QkzbError(Exception):
    """Base class for all errors raised by qkzb-lab."""


class InvalidModulus(QkzbError):
    """A modular parameter sits in the wrong half plane."""


class NonConvergent(QkzbError):
    """A series or product hit its term cap before meeting the tolerance."""


class PoleHit(QkzbError):
    """An evaluation landed on (or too close to) a pole.

    The ``factor`` attribute names the offending factor when known.
    """

    def __init__(self, message, factor=None):
        super().__init__(message)
        self.factor = factor


class IllConditioned(QkzbError):
    """A collocation system is numerically rank deficient."""


class ResidualTooLarge(QkzbError):
    """A least-squares solve left a residual above the admissible bound."""


class NotIntegral(QkzbError):
    """An operation requiring a nonnegative-integer weight got something else."""


class PlanInfeasible(QkzbError):
    """No integration contour with the requested pole clearance was found."""


class NotConverged(QkzbError):
    """A quadrature refinement check exceeded the requested tolerance."""

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class DivergentEntry(QkzbError):
    """A solution-tensor entry violates the admissibility hypothesis."""

    def __init__(self, message, row=None, col=None):
        super().__init__(message)
        self.row = row
        self.col = col


class ConfigError(QkzbError):
    """A run configuration failed to parse or validate."""


class BranchWarning(UserWarning):
    """A principal-branch logarithm was taken close to the cut."""


class ConditionViolation(UserWarning):
    """A bounded lattice search flagged a near-resonant parameter."""
