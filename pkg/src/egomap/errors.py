"""Exception types raised across the package."""


class EgomapError(Exception):
    """Base class for all package errors."""


class ShapeError(EgomapError, ValueError):
    pass


class BehindCamera(EgomapError, ValueError):
    pass


class DegenerateMatch(EgomapError):
    """Raised when a rotation distribution cannot be formed (all-zero input)."""


class BoxError(EgomapError, ValueError):
    pass


class PlacementError(EgomapError):
    pass


class FormatError(EgomapError):
    """Malformed file. ``offset`` is the byte offset of the first bad field."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
