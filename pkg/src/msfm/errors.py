"""Exception hierarchy shared by the library and the CLI."""


class MsfmError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ConfigError(MsfmError):
    exit_code = 1


class ShapeError(MsfmError, ValueError):
    exit_code = 1


class EmptyBatchError(MsfmError, ValueError):
    exit_code = 3


class DataFormatError(MsfmError, ValueError):
    """Malformed dataset file. ``row`` is the 1-based line number when known."""

    exit_code = 3

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class CostDomainError(MsfmError, ValueError):
    exit_code = 2


class NumericalError(MsfmError, ArithmeticError):
    """Non-finite values or a failed numerical procedure.

    ``step`` records the training step or integration step where it happened.
    """

    exit_code = 2

    def __init__(self, message, step=None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step


class StepUnderflowError(NumericalError):
    pass


class UnsupportedOpError(MsfmError, TypeError):
    exit_code = 2


class CheckpointError(MsfmError):
    exit_code = 3
