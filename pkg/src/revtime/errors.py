"""Exception types shared across the package."""


class RevtimeError(Exception):
    """Base class for all errors raised by this package."""


class EstimationError(RevtimeError):
    """The estimator could not produce a T60 estimate for this input."""
