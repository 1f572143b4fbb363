"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand dimensions are inconsistent with an operation's contract."""


class ConfigError(ValueError):
    """A configuration value or combination of values is invalid."""


class DataError(ValueError):
    """Dataset contents violate a documented constraint (labels, splits, masks)."""


class FormatError(ValueError):
    """A serialized artifact is malformed.

    Carries the byte offset of the problem when it is known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class StateError(RuntimeError):
    """An operation was invoked before its required state was prepared."""


class TapeError(RuntimeError):
    """Gradient bookkeeping misuse: non-scalar loss, repeated backward, missing grads."""


class NumericsError(RuntimeError):
    """Non-finite values appeared, or a computation is numerically impossible."""
