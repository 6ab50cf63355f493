"""Exception hierarchy.

Every error carries the CLI exit code it maps to: 2 for data problems,
3 for numeric failures.
"""


class ForensicsError(Exception):
    exit_code = 2


class NumericError(ForensicsError):
    exit_code = 3


# raster
class UnsupportedFormat(ForensicsError):
    pass


class CorruptStream(ForensicsError):
    pass


class IoFailure(ForensicsError, OSError):
    pass


class QualityOutOfRange(ForensicsError, ValueError):
    pass


class NonPositiveScale(ForensicsError, ValueError):
    pass


# comat / spam
class OffsetTooLarge(ForensicsError, ValueError):
    pass


class DimensionMismatch(ForensicsError, ValueError):
    pass


class PlaneTooSmall(ForensicsError, ValueError):
    pass


# attacks
class BadWindow(ForensicsError, ValueError):
    pass


class NonPositiveGamma(ForensicsError, ValueError):
    pass


class NegativeSigma(ForensicsError, ValueError):
    pass


class BadParams(ForensicsError, ValueError):
    pass


class AttackFailed(ForensicsError):
    """Wraps an error raised by one step of an attack chain."""

    def __init__(self, step: int, kind: str, cause: Exception):
        super().__init__(f"attack step {step} ({kind}) failed: {cause}")
        self.step = step
        self.kind = kind
        self.cause = cause
        if isinstance(cause, ForensicsError):
            self.exit_code = cause.exit_code


# nn / svm
class ShapeMismatch(ForensicsError, ValueError):
    pass


class EmptyClass(ForensicsError, ValueError):
    pass


class DivergedToNaN(NumericError):
    pass


class LengthMismatch(ForensicsError, ValueError):
    pass


class MaxIterationsExceeded(NumericError):
    pass


class TooFewExamples(ForensicsError, ValueError):
    pass


# pipeline
class EmptyDataset(ForensicsError):
    pass


class UnlabeledEntry(ForensicsError):
    pass


class ConfigInvalid(ForensicsError, ValueError):
    pass
