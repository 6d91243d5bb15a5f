"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`EvsyncError`.
The CLI maps the three families below onto exit codes 1, 2 and 3.
"""


class EvsyncError(Exception):
    exit_code = 2


class ConfigError(EvsyncError, ValueError):
    """Invalid configuration or argument values."""

    exit_code = 1


class GeometryError(EvsyncError):
    """Runtime failure of a numerical stage."""

    exit_code = 2


class DegenerateGeometryError(GeometryError):
    pass


class EpipoleDegenerateError(GeometryError):
    pass


class InsufficientDataError(GeometryError):
    pass


class DegeneracyError(GeometryError):
    pass


class CheiralityError(GeometryError):
    pass


class IllConditionedError(GeometryError):
    pass


class NoOverlapError(GeometryError):
    pass


class UndefinedCorrelationError(GeometryError):
    pass


class ShiftUnderflowError(GeometryError):
    pass


class VisibilityError(GeometryError):
    pass


class EventFileError(EvsyncError):
    """Unreadable or malformed input file."""

    exit_code = 3


class BoundsError(EventFileError):
    pass


class TimestampOrderError(EventFileError):
    pass


class OffsetOutOfRangeError(GeometryError):
    pass
