"""Exception hierarchy shared by every subpackage."""


class EAPruneError(Exception):
    """Base class for all library errors."""


class DimensionError(EAPruneError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class NumericError(EAPruneError, ArithmeticError):
    """Non-finite input or an unrecoverable numerical failure."""


class BoundsError(EAPruneError, ValueError):
    """A count or index falls outside its permitted range."""


class EmptySpaceError(EAPruneError, ValueError):
    """The network exposes nothing to prune."""


class ConfigError(EAPruneError, ValueError):
    """Invalid run configuration."""


class FormatError(EAPruneError, ValueError):
    """Malformed binary or text file.

    ``offset`` is the byte offset at which the problem was detected, or None
    when the format is not positional (e.g. JSON).
    """

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
