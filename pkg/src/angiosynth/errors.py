"""Exception types shared across the package."""


class AngiosynthError(Exception):
    """Base class for all package errors."""


class ConfigError(AngiosynthError, ValueError):
    """A network/config description is internally inconsistent or mismatched."""


class InputError(AngiosynthError, ValueError):
    """Runtime data fed to an operation violates its preconditions."""


class IngestionError(AngiosynthError, RuntimeError):
    """A dataset file is missing, unreadable, or dimensionally inconsistent."""


class CheckpointError(AngiosynthError, RuntimeError):
    """A checkpoint/archive file is corrupt or does not match the model."""


class DivergenceError(AngiosynthError, RuntimeError):
    """Training produced a non-finite loss; carries the failing cycle index."""

    def __init__(self, message, cycle=None):
        super().__init__(message)
        self.cycle = cycle


class NumericsError(AngiosynthError, RuntimeError):
    """A numerical routine (e.g. matrix square root) failed after stabilization."""
