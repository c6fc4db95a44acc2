"""Exception hierarchy shared across the package.

Three broad buckets map onto CLI exit codes: ConfigError (2), DataError (3)
and NumericError (4). Everything else derives from one of those or from
ValueError for plain contract violations.
"""


class ConfigError(Exception):
    """Invalid or inconsistent configuration; detected before any compute."""


class DataError(Exception):
    """Input files or arrays that fail validation."""


class NumericError(Exception):
    """Numerical failure during compute (divergence, non-finite values)."""


class DegenerateRotation(NumericError):
    """6-DOF rotation input whose columns cannot be orthogonalized."""


class NotARotation(DataError):
    """Matrix fails the orthogonality / determinant check."""


class TooShort(DataError):
    """Sequence shorter than the operation's minimum length."""


class ShapeMismatch(DataError):
    """Array shapes disagree."""


class InvalidSteps(ConfigError):
    """Diffusion step count < 1."""


class StepOutOfRange(DataError):
    """Timestep index outside [0, T]."""


class BadOverlap(DataError):
    """Long-form conditioning slices do not overlap consistently."""


class EmptyAudio(DataError):
    pass


class NoTempoFound(DataError):
    """Onset envelope is flat; no tempo peak."""


class BadHeader(DataError):
    """Container file header failed to parse or validate."""


class FpsMismatch(DataError):
    """Stored fps differs from requested fps and resampling is disabled."""


class EmptyMusicBeats(DataError):
    pass


class TooFewClips(DataError):
    pass


class DimensionMismatch(DataError):
    """Feature dimensions of two distributions disagree."""


class ZeroLengthBone(DataError):
    pass


class NonFiniteLoss(NumericError):
    """Training loss became NaN/inf; the step is aborted."""


class NonFiniteActivation(NumericError):
    """Diagnostic: non-finite values inside the denoiser."""


class FeatureTooShort(DataError):
    """Conditioning does not cover the requested duration."""


class ConstraintShapeMismatch(DataError):
    pass
