"""Exception hierarchy shared by every hydemic module."""


class HydemicError(Exception):
    """Base class for all package-specific errors."""


class DataError(HydemicError, ValueError):
    """Input data is malformed or inconsistent."""


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DimensionError(DataError):
    pass


class DuplicateRecordError(DataError):
    pass


class LabelLookupError(HydemicError, LookupError):
    pass


class DegenerateStatisticsError(HydemicError, ValueError):
    pass


class TrainingDivergedError(HydemicError, RuntimeError):
    def __init__(self, message, epoch=None):
        self.epoch = epoch
        if epoch is not None:
            message = f"epoch {epoch}: {message}"
        super().__init__(message)


class ModelFileError(DataError):
    pass


class VersionError(ModelFileError):
    pass


class ChecksumError(ModelFileError):
    pass


class TruncatedFileError(ModelFileError):
    pass
