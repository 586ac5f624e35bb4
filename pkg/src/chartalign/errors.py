"""Exception hierarchy shared by every module."""


class ChartAlignError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ChartAlignError, ValueError):
    """Invalid configuration, dimension mismatch or unknown option."""


class InputError(ChartAlignError, ValueError):
    """Malformed input data (non-finite pixels, unresolvable references)."""


class ValidationError(ChartAlignError, ValueError):
    """A value violates a declared invariant or grammar."""


class LoadError(ChartAlignError):
    """An external dataset record could not be mapped."""

    def __init__(self, message: str, index: int | None = None, field: str | None = None):
        self.index = index
        self.field = field
        if index is not None:
            message = f"record {index}: {message}"
        super().__init__(message)


class DataError(ChartAlignError, ValueError):
    """Training data that cannot produce a loss (e.g. nothing supervised)."""


class TokenizationError(ChartAlignError, ValueError):
    """A character outside the tokenizer alphabet."""


class CorruptionError(ChartAlignError):
    """Checkpoint bytes do not match their recorded digests or layout."""


class DivergenceError(ChartAlignError, RuntimeError):
    """Training produced a non-finite loss."""
