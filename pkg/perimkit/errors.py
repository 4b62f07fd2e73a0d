"""Exception hierarchy shared by every pipeline stage."""

from typing import Optional


class PerimkitError(Exception):
    """Base class for all perimkit failures."""


class ParallelLinesError(PerimkitError):
    pass


class GenerationFailure(PerimkitError):
    pass


class InvalidRangeError(PerimkitError):
    pass


class OutOfBoundsError(PerimkitError):
    pass


class BehindCameraError(PerimkitError):
    pass


class NoNeighborsError(PerimkitError):
    pass


class IntrinsicsMismatchError(PerimkitError):
    pass


class MissingDepthError(PerimkitError):
    pass


class DegenerateError(PerimkitError):
    """Input too small or collinear for the requested construction."""


class EmptyShapeError(PerimkitError):
    pass


class EmptyCloudError(PerimkitError):
    pass


class TooFewPointsError(PerimkitError):
    pass


class DimensionMismatchError(PerimkitError):
    pass


class MissingNormalsError(PerimkitError):
    pass


class TooFewClustersError(PerimkitError):
    pass


class DegenerateLayoutError(PerimkitError):
    pass


class DegeneratePolygonError(PerimkitError):
    pass


class EmptyPerimeterError(PerimkitError):
    pass


class LengthMismatchError(PerimkitError):
    pass


class FormatError(PerimkitError):
    """A file could not be parsed in the expected dialect."""


class ConfigError(PerimkitError):
    pass


class StageError(PerimkitError):
    """A pipeline stage failed for one scene."""

    def __init__(self, stage: str, scene_id: str, cause: Optional[BaseException] = None):
        self.stage = stage
        self.scene_id = scene_id
        self.cause = cause
        detail = f": {cause}" if cause is not None else ""
        super().__init__(f"scene '{scene_id}' failed in stage '{stage}'{detail}")

    def __reduce__(self):
        return (StageError, (self.stage, self.scene_id, self.cause))
