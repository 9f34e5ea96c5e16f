"""Exception hierarchy shared by all surround_geom modules."""


class SurroundGeomError(Exception):
    """Base class for all domain errors raised by this package."""


class InvalidArgumentError(SurroundGeomError, ValueError):
    """An argument violates a documented precondition."""


class BehindCameraError(SurroundGeomError):
    """A 3-D point has non-positive depth in the camera frame."""


class OutsideFovError(SurroundGeomError):
    """A fisheye pixel maps beyond the lens field of view (unmapped, not fatal)."""


class DegenerateBaselineError(SurroundGeomError):
    """Two camera centers coincide; stereo rectification is undefined."""


class DegenerateGeometryError(SurroundGeomError):
    """An estimation problem is rank deficient (e.g. collapsed normal equations)."""


class InsufficientDataError(SurroundGeomError):
    """Not enough observations survive filtering to attempt an operation."""


class NotFoundError(SurroundGeomError, KeyError):
    """An id (camera, frame, landmark) is not present in a container."""


class NoValidPixelsError(SurroundGeomError):
    """A metric was requested over an empty valid-pixel set."""
