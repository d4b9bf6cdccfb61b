"""Exception types raised across the package."""


class OccRobNetError(Exception):
    """Base class for package errors."""


class DimensionError(OccRobNetError, ValueError):
    """Tensor shapes do not agree."""


class ContractError(OccRobNetError, ValueError):
    """A documented precondition was violated."""


class UnsupportedOpError(OccRobNetError, ValueError):
    """Requested an operation variant that is not implemented."""


class ConfigError(OccRobNetError, ValueError):
    """Bad or incompatible run configuration."""


class DatasetFormatError(OccRobNetError, ValueError):
    """A dataset file could not be parsed."""

    def __init__(self, message: str, record: int | None = None):
        self.record = record
        if record is not None:
            message = f"record {record}: {message}"
        super().__init__(message)


class NonFiniteError(OccRobNetError, FloatingPointError):
    """A NaN or Inf appeared during training."""
