"""Exception types shared across the package."""


class TecnnError(Exception):
    """Base class for all package errors."""


class ConfigurationError(TecnnError, ValueError):
    """Invalid network, layer or experiment configuration."""


class ContractViolation(TecnnError, ValueError):
    """A caller broke an operation's precondition (shapes, ordering)."""


class NumericError(TecnnError, FloatingPointError):
    """A non-finite value appeared during computation."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class EstimatorUnavailable(TecnnError):
    """TE cannot be estimated yet (window not full)."""


class LoadError(TecnnError, IOError):
    """Malformed dataset file."""


class CheckpointError(TecnnError, IOError):
    """Checkpoint version mismatch or corrupted payload."""
