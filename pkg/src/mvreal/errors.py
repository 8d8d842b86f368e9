"""Shared exception types."""


class InvalidInputError(ValueError):
    """An argument violates an operation's precondition."""


class ConfigurationError(ValueError):
    """A config object is internally inconsistent or contains unknown keys."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message, step=None, snapshot_path=None):
        super().__init__(message)
        self.step = step
        self.snapshot_path = snapshot_path


class PipelineError(RuntimeError):
    """A pipeline stage failed; the record's prior artifacts remain valid."""


class IngestionError(ValueError):
    """An external-view directory does not match the expected layout."""
