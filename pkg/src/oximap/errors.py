"""Exception types shared across the package."""


class OximapError(Exception):
    """Base class for all errors raised by oximap."""


class DimensionError(OximapError):
    """A grid or array dimension cannot accommodate the request."""


class BoundsError(OximapError):
    """A region falls outside the data it indexes."""


class ParameterError(OximapError):
    """A numeric parameter is outside its valid range."""


class LengthError(OximapError):
    """A series is too short (or empty) for the operation."""


class ShapeError(OximapError):
    """Array shapes are inconsistent with the operation."""


class IdentityError(OximapError):
    """Data from different subjects was mixed where it must not be."""


class RankError(OximapError):
    """A fit is underdetermined (degenerate design matrix)."""


class DegenerateSignalError(OximapError):
    """A window's signal is degenerate (zero AC or DC); flag, don't crash."""


class OrderingError(OximapError):
    """Sample timestamps are not strictly increasing."""


class RangeError(OximapError):
    """A query lies outside the covered range (no extrapolation)."""


class DataError(OximapError):
    """Input data is missing, malformed, or inconsistent."""


class ConfigError(OximapError):
    """A configuration document is invalid (unknown key, bad value)."""
