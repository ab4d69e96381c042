"""Exception types shared across the package."""


class ContractError(ValueError):
    """An operation was called outside its documented preconditions."""


class ShapeError(ContractError):
    """Operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where finite values are required."""


class PhonemizationError(ValueError):
    """Input text contains a character outside the romanization alphabet."""

    def __init__(self, message, offset):
        super().__init__(message)
        self.offset = offset


class CheckpointError(RuntimeError):
    """A checkpoint is malformed or does not match the model configuration."""


class ConfigError(ValueError):
    """A configuration file has an unknown key or an invalid value."""


class TrainingAborted(RuntimeError):
    """Training hit a non-finite loss."""

    def __init__(self, message, step, last_good=None):
        super().__init__(message)
        self.step = step
        self.last_good = last_good
