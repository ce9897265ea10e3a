"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class TensorFormatError(ValueError):
    """Base class for tensor-file parse failures."""


class BadMagicError(TensorFormatError):
    """The file does not start with the VIQT magic bytes."""


class UnknownDtypeError(TensorFormatError):
    """The dtype code byte is not one of the defined codes."""


class TruncatedFileError(TensorFormatError):
    """The file ends before the declared payload is complete."""


class TrainingDivergedError(RuntimeError):
    """A non-finite loss or gradient appeared during optimization.

    Carries the epoch and batch index at which the failure was detected.
    """

    def __init__(self, message, epoch, batch_index):
        super().__init__(f"{message} (epoch {epoch}, batch {batch_index})")
        self.epoch = epoch
        self.batch_index = batch_index


class UnsupportedEmbeddingError(ValueError):
    """No exact parameter embedding exists between the two families."""


class ConfigError(ValueError):
    """A configuration file is malformed or inconsistent."""


class ExperimentError(RuntimeError):
    """A sweep job failed; carries which (condition, family, run) did."""

    def __init__(self, message, condition="*", family="*", run=None):
        where = f"condition={condition}, family={family}, run={run}"
        super().__init__(f"{message} [{where}]")
        self.condition = condition
        self.family = family
        self.run = run
