"""Exception taxonomy shared across the package.

Three failure classes map onto the CLI exit codes: configuration problems
(bad config values, mismatched shapes declared up front) exit 2, input
problems (bad data handed to an operation) exit 2, and runtime/training
failures exit 3.
"""


class BspMpnetError(Exception):
    """Base class for all package errors."""


class ConfigurationError(BspMpnetError):
    """A config value or combination of values is invalid."""


class InputError(BspMpnetError):
    """An operation received data that violates its preconditions."""


class TrainingError(BspMpnetError):
    """Training aborted; carries diagnostics about the failing step."""

    def __init__(self, message, step=None, batch_ids=None, loss_parts=None):
        super().__init__(message)
        self.step = step
        self.batch_ids = batch_ids
        self.loss_parts = loss_parts


class CheckpointError(BspMpnetError):
    """Checkpoint file is unreadable, wrong version, or mismatched."""
