"""Exception hierarchy shared by every module."""


class LgdnError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(LgdnError):
    """Operands or parameters have incompatible shapes."""


class NonFiniteTensor(LgdnError):
    """A tensor was about to hold NaN or Inf values."""


class NonFiniteLoss(LgdnError):
    """A loss evaluated to NaN or Inf."""


class NonFiniteGradient(LgdnError):
    """A gradient handed to the optimizer is NaN or Inf."""


class NearZeroNorm(LgdnError):
    """Vector norm is below the normalization threshold."""


class EmptyFrameList(LgdnError):
    """Temporal aggregation received no frames."""


class BatchLargerThanCapacity(LgdnError):
    """Enqueue batch exceeds the memory bank capacity."""


class TooFewFrames(LgdnError):
    """Video has fewer frames than the requested segment count."""


class EmptyBatch(LgdnError):
    """A loss was asked to average over zero pairs."""


class EmptyPositiveSet(LgdnError):
    """A pair has no positive frames for the frame-level loss."""


class EmptySalientSet(LgdnError):
    """Video-level match score requested with no salient frames."""


class EmptyMatrix(LgdnError):
    """Retrieval metric requested on an empty similarity matrix."""


class InvalidConfig(LgdnError):
    """Configuration values violate a documented constraint."""


class MissingCheckpoint(LgdnError):
    """Checkpoint path does not exist or cannot be parsed."""


class SingleClassBatch(UserWarning):
    """Matching batch contains only one label; training signal is weak."""
