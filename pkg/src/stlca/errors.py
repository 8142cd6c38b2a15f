"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: configuration problems exit with 2,
data problems with 3, checkpoint problems with 4.
"""


class ConfigError(ValueError):
    """Invalid configuration: bad sizes, indivisible dimensions, unknown flags."""


class DataError(RuntimeError):
    """Problem with input data: unreadable files, mismatched counts, empty dirs."""


class FlowProviderError(RuntimeError):
    """A flow provider failed to produce a field (missing file, command failure)."""


class CheckpointError(RuntimeError):
    """Checkpoint missing, corrupt, or incompatible with the model config."""


class EmptyBoundaryError(ValueError):
    """A bounding box was requested for an empty boundary context."""
