"""Exception types shared across the package."""


class LsvmError(Exception):
    """Base class for every error raised by this package."""


# --- dataset validation ---------------------------------------------------

class EmptyDataset(LsvmError):
    """No subjects, or a subject with no observations."""


class DimensionMismatch(LsvmError):
    """Feature lengths (or array shapes) disagree."""


class UnsortedTimes(LsvmError):
    """A subject's observation times are not nondecreasing."""


class NonFiniteValue(LsvmError):
    """A time or feature entry is NaN or infinite."""


class SingleClass(LsvmError):
    """A training dataset contains only one class label."""


class EmptyTimes(LsvmError):
    """An operation over observation times received none."""


# --- solver / training ----------------------------------------------------

class NotPSD(LsvmError):
    """The quadratic term is indefinite beyond the accepted rounding floor."""


class SolverFailure(LsvmError):
    """The QP solver terminated without an optimality certificate."""


class DegenerateSolution(LsvmError):
    """The recovered weight vector is (numerically) zero; no direction learned."""


class NoSupportVectors(LsvmError):
    """All dual multipliers are below the support threshold."""


# --- baselines / statistics -----------------------------------------------

class IrregularSampling(LsvmError):
    """Subjects do not share a common time grid where one is required."""


class SingularCovariance(LsvmError):
    """Pooled covariance is rank deficient and no shrinkage was requested."""


class TooFewPairs(LsvmError):
    """Not enough (nonzero) paired differences for the sign-rank test."""


class OutOfRange(LsvmError):
    """A probability-like input lies outside [0, 1]."""


class InvalidConfig(LsvmError):
    """A generator or run configuration violates its invariants."""


# --- file formats -----------------------------------------------------------

class ParseError(LsvmError):
    """Malformed dataset/model/report file."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ChecksumMismatch(LsvmError):
    """Raw payload is truncated or its checksum does not match the manifest."""
