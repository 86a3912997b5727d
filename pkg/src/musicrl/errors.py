"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes do not agree with what an operation expects."""


class UsageError(RuntimeError):
    """An operation was called out of order or with missing state."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf showed up where only finite numbers are allowed."""


class CheckpointIntegrityError(IOError):
    """Checkpoint bytes are corrupt, truncated or not a checkpoint at all."""


class CheckpointVersionError(IOError):
    """Checkpoint was written by an incompatible format version."""


class CompatibilityError(ValueError):
    """A checkpoint does not fit the environment or data it is applied to."""


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""
