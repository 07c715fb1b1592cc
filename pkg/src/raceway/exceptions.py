"""Error types shared across the package.

Every error carries a short machine-readable ``code`` so the command line
layer can report a stable one-line class without parsing messages.
"""

from __future__ import annotations


class RacewayError(Exception):
    """Base class for all package errors."""

    code = "error"


class ConfigNotFoundError(RacewayError):
    """Raised when a referenced configuration file does not exist."""

    code = "config-not-found"


class ConfigError(RacewayError):
    """Raised for unknown keys, bad types, or out-of-range config values.

    ``key_path`` names the offending entry, e.g. ``agent.batch_size``.
    """

    code = "config-invalid"

    def __init__(self, message: str, key_path: str | None = None):
        self.key_path = key_path
        if key_path:
            message = f"{key_path}: {message}"
        super().__init__(message)


class DatasetFormatError(RacewayError):
    """Raised when a transition dataset file is malformed.

    ``line_no`` is the 1-based line number of the first bad row.
    """

    code = "dataset-corrupt"

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class CheckpointFormatError(RacewayError):
    """Raised when an agent or network checkpoint fails validation."""

    code = "checkpoint-invalid"


class DimensionMismatchError(RacewayError):
    """Raised when array shapes disagree with the declared layer sizes."""

    code = "dimension-mismatch"


class NonFiniteInputError(RacewayError):
    """Raised when NaN or infinity reaches a numeric entry point."""

    code = "non-finite-input"


class SimulationUnstableError(RacewayError):
    """Raised when the plant spends too much time pinned at a state bound."""

    code = "simulation-unstable"


class TrainingDivergedError(RacewayError):
    """Raised when a training loss or gradient stops being finite."""

    code = "training-diverged"

    def __init__(self, message: str, epoch: int | None = None):
        self.epoch = epoch
        if epoch is not None:
            message = f"epoch {epoch}: {message}"
        super().__init__(message)


class EmptyBufferError(RacewayError):
    """Raised when training is requested on a buffer with no transitions."""

    code = "empty-buffer"
