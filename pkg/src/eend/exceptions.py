"""Exception hierarchy shared across the toolkit."""


class EendError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(EendError, ValueError):
    """Invalid configuration, inconsistent inputs or empty pools."""


class FormatError(EendError, ValueError):
    """A file does not follow the expected binary or text layout."""


class UnsupportedFormatError(FormatError):
    """A well-formed file uses an encoding the toolkit does not handle."""


class EmptyInputError(EendError, ValueError):
    pass


class DegenerateSignalError(EendError, ValueError):
    pass


class ShapeError(EendError, ValueError):
    pass


class TapeError(EendError, RuntimeError):
    """Raised when a gradient tape is used after it has been released."""


class ParseError(FormatError):
    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class UndefinedMetricError(EendError, ZeroDivisionError):
    pass


class TrainingError(EendError, RuntimeError):
    pass
