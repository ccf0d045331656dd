"""Exception types shared across the package."""


class GlioradError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(GlioradError):
    """A file could not be parsed; the message names the offending field."""


class UnsupportedGeometryError(GlioradError):
    """Geometry outside the supported volumetric model (dims, direction, grids)."""


class DegenerateInputError(GlioradError):
    """Input is structurally valid but statistically unusable (empty ROI, zero variance)."""


class UsageError(GlioradError):
    """An operation was invoked in a way its contract forbids."""


class LeakageError(GlioradError):
    """Rows with test provenance reached a training-only code path."""


class ConvergenceError(GlioradError):
    """An iterative solver exhausted its iteration budget."""


class ConfigError(GlioradError):
    """A run configuration failed validation; the message names the field."""
