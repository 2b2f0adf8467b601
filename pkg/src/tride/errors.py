"""Exception types shared across the package."""


class TrideError(Exception):
    """Base class for all package errors."""


class DimensionError(TrideError, ValueError):
    """Tensor shapes are incompatible with an operation."""


class ContractError(TrideError, ValueError):
    """A documented precondition was violated."""


class ParseError(TrideError, ValueError):
    """A scene description does not follow the dash-paragraph grammar."""


class FormatError(TrideError, ValueError):
    """A binary or JSON file is malformed.

    ``offset`` is the byte position where reading failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
