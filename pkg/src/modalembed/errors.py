"""Exception types shared across the engine.

Grouping them here keeps error handling uniform: the CLI maps these to
exit codes, and tests can assert on precise failure modes.
"""


class EngineError(Exception):
    """Base class for every error raised deliberately by this package."""


# --- configuration / construction ---

class InvalidConfig(EngineError):
    """A configuration value is out of range or inconsistent."""


class InvalidDims(EngineError):
    """A layer-dimension list is unusable (too short, non-positive, ...)."""


class InvalidK(EngineError):
    """A fold or neighbor count outside the legal range."""


class InvalidBatch(EngineError):
    """An embedding batch violates its shape or normalization contract."""


# --- shape / index plumbing ---

class DimensionMismatch(EngineError):
    """Two vectors that must share a length do not."""


class ShapeMismatch(EngineError):
    """An array does not match the shape required by the operation."""


class LengthMismatch(EngineError):
    """Two parallel sequences differ in length."""


class IndexOutOfRange(EngineError):
    """A patient index outside [0, n)."""


class SameIndex(EngineError):
    """An operation that requires two distinct patients got i == j."""


class TraceMismatch(EngineError):
    """A forward trace does not belong to the given parameters/output."""


# --- numerics ---

class ZeroVector(EngineError):
    """Vector norm too small (or non-finite) to normalize."""


class NumericalOverflow(EngineError):
    """A log/exp left the representable range despite stabilization."""


class DegenerateCovariance(EngineError):
    """Covariance has rank 0; no principal directions exist."""


class DegenerateTest(EngineError):
    """Zero pooled variance with unequal means; the t statistic is undefined."""


# --- data / evaluation ---

class FormatError(EngineError):
    """A serialized file does not match its documented layout."""


class InsufficientPatients(EngineError):
    """Asked for a larger batch than the dataset can supply."""


class InsufficientSamples(EngineError):
    """A statistic needs more observations than were given."""


class EmptyTrainSet(EngineError):
    """Classifier asked to fit on zero reference rows."""


class KTooLarge(EngineError):
    """Neighbor count exceeds the training-set size."""


class SingleClass(EngineError):
    """A ranking metric needs both classes present."""
