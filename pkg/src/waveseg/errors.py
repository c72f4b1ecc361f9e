"""Exception hierarchy shared across the package."""


class WavesegError(Exception):
    """Base class for all errors raised by waveseg."""


class ShapeError(WavesegError):
    """Tensor dimensions are incompatible with the requested operation."""


class ConfigError(WavesegError):
    """A configuration value is invalid or internally inconsistent."""


class ContractError(WavesegError):
    """An API precondition was violated (wrong dtype, non-scalar loss, ...)."""


class DataError(WavesegError):
    """Dataset or label content is malformed."""


class CheckpointError(WavesegError):
    """A checkpoint file is corrupt or does not match the model."""


class DivergenceError(WavesegError):
    """Training produced a non-finite loss.

    ``last_checkpoint`` points at the most recent finite-state checkpoint,
    or is None when divergence happened before anything was saved.
    """

    def __init__(self, message, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint
