"""Exception types shared across the package.

Every error raised by evderain derives from EvderainError so the CLI can map
failures to stable exit codes.
"""


class EvderainError(Exception):
    pass


class ParseError(EvderainError):
    """Malformed input file; message names the offending line or record."""


class ValidationError(EvderainError):
    """Input violates a documented precondition (e.g. unsorted timestamps)."""


class EmptyCloudError(EvderainError):
    """An event cloud with zero events where at least one is required."""


class RangeError(EvderainError):
    """A coordinate or index outside its permitted range."""


class ShapeError(EvderainError):
    """Tensor shape mismatch; message lists both shapes."""


class ContractError(EvderainError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""


class NumericError(EvderainError):
    """Non-finite values where finite ones are required."""


class UndefinedMetricError(EvderainError):
    """A metric denominator is zero. Carries the partially-filled report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConfigError(EvderainError):
    """Bad or missing configuration key."""


class CheckpointMismatchError(EvderainError):
    """Checkpoint tensors do not match the model configuration."""
