"""Exception types shared across the toolkit."""


class WattsplitError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(WattsplitError, ValueError):
    """Array shapes are incompatible with the requested operation."""


class DomainError(WattsplitError, ValueError):
    """An argument is outside the operation's valid domain."""


class ParseError(WattsplitError, ValueError):
    """A data file violates its grammar.

    Carries the 1-based line number when known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(WattsplitError, ValueError):
    """A run configuration file is malformed or inconsistent."""


class TrainingError(WattsplitError, RuntimeError):
    """Training cannot continue (e.g. non-finite gradients)."""


class DivergenceError(TrainingError):
    """The loss became non-finite; carries the epoch index."""

    def __init__(self, epoch, message=None):
        super().__init__(message or f"training diverged at epoch {epoch}: loss is non-finite")
        self.epoch = epoch


class CheckpointError(WattsplitError):
    """Base class for checkpoint load failures."""


class CheckpointFormatError(CheckpointError):
    """The file does not start with the expected magic bytes."""


class CheckpointVersionError(CheckpointError):
    """The file carries an unsupported format version."""


class CheckpointTruncatedError(CheckpointError):
    """The file ends before the declared payload is complete."""
