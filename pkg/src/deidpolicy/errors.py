"""Exception types shared across the package."""


class DeidPolicyError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(DeidPolicyError):
    """An input file, configuration, or value failed validation."""


class InvalidPolicyCodeError(ValidationError):
    """A policy code could not be resolved against the hierarchy."""


class InsufficientPopulationError(DeidPolicyError):
    """A draw requested more cases than the remaining population."""


class ScheduleMismatchError(DeidPolicyError):
    """An operation was called with data of the wrong release schedule."""


class AlignmentError(DeidPolicyError):
    """Decisions, forecasts, and case series do not cover the same periods."""
