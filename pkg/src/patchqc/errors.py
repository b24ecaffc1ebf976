"""Exception hierarchy for the patch-qc pipeline.

Two broad families matter for the CLI exit codes: configuration problems
(bad parameters, missing files, malformed config) and data problems
(degenerate geometry, empty inputs, insufficient support). Everything else
is an internal error.
"""


class PatchQCError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PatchQCError):
    """Invalid configuration: bad parameter value, missing field or file."""


class DataError(PatchQCError):
    """Input data cannot be processed as requested."""


class FormatError(DataError):
    """A file does not conform to its declared format."""


class CrsMismatch(DataError):
    """Inputs declare different coordinate reference systems."""


class DegenerateGeometry(DataError):
    """Too few points, or points are collinear/coincident."""


class EmptyInput(DataError):
    """An operation received an empty point cloud."""


class MissingLabels(DataError):
    """Ground labels were expected on the input but are absent."""


class NoSeeds(DataError):
    """No Hough bin reached the minimum seed support."""


class MissingOrtho(ConfigError):
    """Shadow or vegetation screening requested without an orthoimage."""


class NearVerticalPlane(DataError):
    """Vertical deviations are undefined for a plane steeper than 45 degrees."""


class TooFewPoints(DataError):
    """Patch statistics need at least two samples."""


class TooFewPatches(DataError):
    """Block statistics need at least two patches."""


class InsufficientNeighbors(DataError):
    """A reference target has fewer than three usable ALS neighbors."""


class TooFewValues(DataError):
    """Histogram construction needs at least two values."""


class InvalidSpec(ConfigError):
    """A synthetic scene specification is inconsistent."""


class PatchSetMismatch(DataError):
    """Compared evaluation runs did not use the same patch id set."""


class DegenerateHistogram(UserWarning):
    """Constant luminance: no shadow threshold exists; mask is all-false."""
