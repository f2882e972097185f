"""Exception hierarchy shared by all modules."""


class SRDSError(Exception):
    """Base class for library errors."""


class DomainError(SRDSError, ValueError):
    """An argument lies outside the domain of the operation."""


class ShapeError(SRDSError, ValueError):
    """State dimension does not match the model dimension."""


class NumericError(SRDSError, ArithmeticError):
    """A non-finite value was produced or supplied.

    ``context`` carries where it happened (node index, block, phase, ...).
    """

    def __init__(self, message, **context):
        self.context = context
        if context:
            detail = ", ".join(f"{k}={v}" for k, v in context.items())
            message = f"{message} ({detail})"
        super().__init__(message)


class ScheduleOrientationError(DomainError):
    """A step was requested that moves away from the data end of the schedule."""


class ConfigError(SRDSError, ValueError):
    """Invalid run configuration; ``field`` names the offending setting."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
