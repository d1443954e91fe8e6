"""Exception hierarchy shared by all pipeline stages."""


class PerceptionError(Exception):
    """Base class for every recoverable failure raised by this package."""

    #: short machine-readable reason, used in reject lists and CLI output
    reason = "error"


class ConstantImage(PerceptionError):
    reason = "ConstantImage"


class ZeroMagnitude(PerceptionError):
    reason = "ZeroMagnitude"


class NonPositiveDepth(PerceptionError):
    reason = "NonPositiveDepth"


class MissingDepth(PerceptionError):
    reason = "MissingDepth"


class InvalidCircle(PerceptionError):
    reason = "InvalidCircle"


class EmptyCloud(PerceptionError):
    reason = "EmptyCloud"


class DegenerateNeighborhood(PerceptionError):
    reason = "DegenerateNeighborhood"


class InsufficientCorrespondences(PerceptionError):
    reason = "InsufficientCorrespondences"


class NoCorrespondences(PerceptionError):
    reason = "NoCorrespondences"


class NotARotation(PerceptionError):
    reason = "NotARotation"


class ZeroVector(PerceptionError):
    reason = "ZeroVector"


class UndefinedScore(PerceptionError):
    reason = "UndefinedScore"


class NoValidPixels(PerceptionError):
    reason = "NoValidPixels"


class CapBehindPlane(PerceptionError):
    reason = "CapBehindPlane"


class ShapeMismatch(PerceptionError):
    reason = "ShapeMismatch"


class FormatError(PerceptionError):
    """A file could not be parsed; the message names the line or byte offset."""

    reason = "FormatError"


class StageError(PerceptionError):
    """Wraps a failure from one pose-estimation stage, keeping the stage name."""

    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause
        self.reason = getattr(cause, "reason", type(cause).__name__)
