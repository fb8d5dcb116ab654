"""Exception hierarchy shared by the simulation library and the CLI."""


class SlowFastError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class InvalidInputError(SlowFastError, ValueError):
    exit_code = 2


class InvalidModelError(InvalidInputError):
    pass


class ConfigValidationError(InvalidInputError):
    """Raised for a bad experiment config; ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class BlowUpError(SlowFastError, FloatingPointError):
    """A path left the finite region (non-finite or norm above the threshold)."""

    exit_code = 3

    def __init__(self, time, sample=None, message=None):
        where = f"t={time:.6g}" if sample is None else f"t={time:.6g}, sample {sample}"
        super().__init__(message or f"integration blew up at {where}")
        self.time = time
        self.sample = sample


class InsufficientDataError(SlowFastError):
    exit_code = 4

    def __init__(self, message, excluded=()):
        super().__init__(message)
        self.excluded = list(excluded)
