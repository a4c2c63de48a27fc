"""Exception types shared across the package."""


class EvactError(Exception):
    """Base class for all errors raised by evact."""


class ShapeError(EvactError):
    """Array shapes do not satisfy an operation's contract."""


class ConfigError(EvactError):
    """Invalid model, training, or generator configuration."""


class ParseError(EvactError):
    """Malformed event file, config file, or checkpoint.

    ``index`` is the 0-based record index of the first offending record
    when the error is tied to a specific record, else None.
    """

    def __init__(self, message: str, index: int | None = None):
        if index is not None:
            message = f"{message} (record {index})"
        super().__init__(message)
        self.index = index


class DataError(EvactError):
    """Dataset-level problem: missing split, corrupt sample, bad manifest."""
