"""Exception hierarchy shared by every module."""


class DsntError(Exception):
    """Base class for all library errors."""


class DimensionError(DsntError, ValueError):
    """Operand shapes do not agree."""


class ContractError(DsntError, ValueError):
    """A documented precondition was violated."""


class EmptyInputError(DsntError, ValueError):
    """Token sequence is empty once padding is removed."""


class NonFiniteError(DsntError, FloatingPointError):
    """An operation produced NaN or Inf."""


class TrainingError(DsntError, RuntimeError):
    """Training diverged; carries the epoch and batch where it happened."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class PersistenceError(DsntError, ValueError):
    """A checkpoint or data file could not be read back."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
