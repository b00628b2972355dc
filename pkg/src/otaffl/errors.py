"""Exception types raised across the package."""


class OtaFflError(Exception):
    """Base class for all package errors."""


class InvalidInputError(OtaFflError, ValueError):
    pass


class NumericFailureError(OtaFflError, RuntimeError):
    """An iterative routine failed to converge or produced non-finite values."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ChannelDegenerateError(OtaFflError, ValueError):
    """A channel coefficient is too weak to invert."""

    def __init__(self, message, client=None):
        super().__init__(message)
        self.client = client


class EmptySelectionError(OtaFflError, RuntimeError):
    pass


class SchedulingError(OtaFflError, ValueError):
    pass


class PartitionInfeasibleError(OtaFflError, RuntimeError):
    pass


class IdxFormatError(OtaFflError, ValueError):
    pass


class BadMagicError(IdxFormatError):
    pass


class TruncatedFileError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


class ConfigError(OtaFflError, ValueError):
    """Invalid experiment configuration; ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
