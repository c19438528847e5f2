"""Exception types shared across the package."""


class LiftSegError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(LiftSegError):
    """A knob, threshold, or structural parameter is out of its valid range."""


class ShapeError(LiftSegError):
    """Array shapes or sizes do not line up."""


class InvalidDepthError(LiftSegError):
    """A depth value is zero, negative, or non-finite where positive depth is required."""


class OutOfBoundsError(LiftSegError):
    """A pixel coordinate falls outside the image."""


class BehindCameraError(LiftSegError):
    """A world point has non-positive depth in the camera frame."""


class DegenerateMaskError(LiftSegError):
    """A soft mask carries (numerically) zero total weight."""


class UndefinedLossError(LiftSegError):
    """A loss is requested on inputs for which it has no defined value."""


class EmptyInputError(LiftSegError):
    """A non-empty collection was required."""


class FixtureIOError(LiftSegError):
    """A fixture file is missing, truncated, or malformed."""


class StageError(LiftSegError):
    """A pipeline stage failed; carries the stage name for diagnostics."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
