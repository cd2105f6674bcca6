class HnnError(Exception):
    """Base class for package errors."""


class ConfigError(HnnError, ValueError):
    """Invalid configuration (schema violation, inconsistent settings)."""


class DataError(HnnError, ValueError):
    """Input data cannot support the requested operation."""


class DivergenceError(HnnError, FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, message, seed=None):
        super().__init__(message)
        self.seed = seed


class LeakageError(HnnError, RuntimeError):
    """A forecast used information dated after its origin."""
