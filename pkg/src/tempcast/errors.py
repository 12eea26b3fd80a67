"""Exception hierarchy shared by every module."""


class TempcastError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(TempcastError, ValueError):
    pass


class ParameterError(TempcastError, ValueError):
    pass


class ConfigError(ParameterError):
    pass


class DataError(TempcastError):
    """Anything wrong with input data; the CLI maps these to exit code 3."""


class IngestionError(DataError):
    def __init__(self, message, line=None, column=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)
        self.line = line
        self.column = column


class DegenerateFeatureError(DataError, ValueError):
    pass


class ImputationError(DataError, ValueError):
    pass


class InsufficientDataError(DataError, ValueError):
    pass


class SplitError(DataError, ValueError):
    pass


class ConsistencyError(TempcastError):
    """A cache, scaler or checkpoint does not belong to the object it is used with."""


class DivergenceError(TempcastError, FloatingPointError):
    pass


class CheckpointError(DataError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class CheckpointFormatError(CheckpointError):
    pass
