"""Exception types raised across the toolkit.

Every error the package raises on purpose derives from KVCrushError, so
callers (and the CLI) can catch one base class and map it to a stable
exit code. Names describe the contract violation, not the call site.
"""


class KVCrushError(Exception):
    """Base class for all toolkit errors."""


# --- trace file / header errors ---


class MalformedHeader(KVCrushError):
    """Trace file header is unreadable: bad magic, version, field, or name."""


class DimensionMismatch(KVCrushError):
    """Tensor payload does not match the dimensions promised by the header."""


class NonFiniteValue(KVCrushError):
    """A NaN or infinity was found where finite float32 data is required."""


class IoFailure(KVCrushError):
    """Underlying file could not be read or written."""


class InvalidSpec(KVCrushError):
    """Synthetic generation or workload spec violates its own invariants."""


class OverflowExceedsAddressSpace(KVCrushError):
    """Computed byte count does not fit in an unsigned 64-bit integer."""


# --- scoring / fingerprint errors ---


class ShapeMismatch(KVCrushError):
    """Array arguments disagree on sequence length or head dimension."""


class InvalidFraction(KVCrushError):
    """A fraction parameter is outside its documented range."""


class LayerOutOfRange(KVCrushError):
    """Requested layer index does not exist in the trace."""


# --- grouping errors ---


class EmptyInput(KVCrushError):
    """An operation that needs at least one fingerprint got none."""


class LengthMismatch(KVCrushError):
    """Fingerprints (or a fingerprint and an anchor) differ in bit width."""


class ZeroBuckets(KVCrushError):
    """Bucket count must be at least one."""


class InconsistentAssignment(KVCrushError):
    """A bucket assignment does not cover the fingerprints it is applied to."""


class KTooLarge(KVCrushError):
    """Requested more k-means centers than there are points."""


# --- baseline / budget errors ---


class BudgetExceedsSequence(KVCrushError):
    """A window selection asks for more tokens than the sequence holds."""


class WindowTooLarge(KVCrushError):
    """Observation window is longer than the sequence."""


class BudgetTooSmall(KVCrushError):
    """Budget cannot give every layer at least one token."""


# --- pipeline / evaluation errors ---


class EmptyPage(KVCrushError):
    """A page or chunk contains no tokens."""


class InvalidPartition(KVCrushError):
    """Page ranges do not partition the sequence exactly."""


class IndexOutOfRange(KVCrushError):
    """A retained-token index falls outside the traced sequence."""
