"""Exception hierarchy shared by every module."""


class SAUError(Exception):
    """Base class for all errors raised by this package."""


class InvalidShapeError(SAUError, ValueError):
    pass


class ContractError(SAUError, ValueError):
    """A documented precondition was violated by the caller."""


class HashMismatchError(ContractError):
    """A plan or checkpoint refers to a different mask/model than supplied."""


class GenerationError(SAUError):
    pass


class InvalidInputError(SAUError, ValueError):
    pass


class TrainingError(SAUError, ArithmeticError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite training loss {loss!r} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


class UnlearningError(SAUError, ArithmeticError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(
            f"non-finite unlearning loss {loss!r} at epoch {epoch}, batch {batch}"
        )
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


class ConfigError(SAUError, ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class CheckpointError(SAUError):
    pass


class BadMagicError(CheckpointError):
    pass


class UnknownVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    """Content hash stored in the file does not match its payload."""
