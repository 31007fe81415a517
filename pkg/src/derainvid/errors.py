"""Exception hierarchy shared by all derainvid modules."""


class DerainError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(DerainError):
    """Tensor extents are inconsistent with what an operation requires."""


class ContractError(DerainError):
    """An operation was called outside its documented contract."""


class ConfigError(DerainError):
    """A configuration value is invalid or unknown."""


class NumericalError(DerainError):
    """A non-finite value (NaN/Inf) appeared where only finite values are allowed."""


class RangeError(DerainError):
    """A value lies outside its documented range (e.g. pixels outside [0, 1])."""


class IoError(DerainError):
    """Reading or writing frames/checkpoints failed."""


class TrainingError(DerainError):
    """Optimization diverged (non-finite loss)."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration
