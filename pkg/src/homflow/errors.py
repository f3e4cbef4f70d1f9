"""Exception types shared across the package."""


class HomflowError(Exception):
    """Base class for all package errors."""


class BoundViolation(HomflowError):
    """A coefficient or integrand violates its declared growth/convexity bounds."""


class AlignmentError(HomflowError):
    """A shift required by the unfolding operator leaves the offset lattice."""


class NonConvergence(HomflowError):
    """An iterative solver failed to reach its tolerance."""


class ConvexityLoss(HomflowError):
    """A Newton Hessian turned out not to be positive definite."""


class ConvexityFailure(HomflowError):
    """A tabulated effective integrand failed its convexity certificate."""


class InsufficientData(HomflowError):
    """Not enough rows/samples to compute the requested statistic."""
