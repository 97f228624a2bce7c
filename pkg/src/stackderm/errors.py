"""Exception types shared across the package."""


class StackdermError(Exception):
    """Base class for package errors."""


class ConfigError(StackdermError, ValueError):
    """An inconsistent layer, network, split or run configuration."""


class UsageError(StackdermError, RuntimeError):
    """An API was called out of order (e.g. backward before forward)."""


class TrainingDiverged(StackdermError, RuntimeError):
    """The training loss became NaN or infinite."""


class DataError(StackdermError, ValueError):
    """Malformed input data; ``row`` is the 1-based manifest row when known."""

    def __init__(self, message, row=None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)
