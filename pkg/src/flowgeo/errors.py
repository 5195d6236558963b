"""Exception types shared across the package."""


class FlowGeoError(Exception):
    """Base class for all package errors."""


class BehindCameraError(FlowGeoError):
    """A 3-D point with non-positive depth was projected."""


class InvalidDepthError(FlowGeoError):
    """A non-positive or non-finite depth value was supplied."""


class DimensionError(FlowGeoError):
    """Grid shapes do not match or a grid is too small for an operation."""


class InvalidSceneError(FlowGeoError):
    """Scene parameters violate positivity or placement invariants."""


class NoValidPixelsError(FlowGeoError):
    """A masked reduction was requested over an empty valid set."""


class DegenerateTranslationError(FlowGeoError):
    """The forward translation component is too small for the
    divergence/depth relation (|t_3| below threshold)."""


class FormatError(FlowGeoError):
    """A file does not conform to its declared on-disk format."""


class AbortedRunError(FlowGeoError):
    """An optimization run diverged; carries the partial trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
