"""Bit-kernel backends.

The Hamming passes (distance to an anchor, distance to a centroid,
per-bucket bit tallies) are the only hot loops in the package. Two
interchangeable implementations live here:

* ``numba_backend`` - @njit compiled loops, the default when numba imports.
* ``numpy_backend`` - vectorized numpy, always available.

Set ``KVCRUSH_BACKEND=numpy`` or ``KVCRUSH_BACKEND=numba`` to force one;
anything else (or unset) means "numba if available". Selection happens on
every call so tests and benchmarks can flip the env var at runtime.

Fingerprints travel as uint8 0/1 matrices at the API level and are packed
into uint64 words here. Bit order within a word is an internal detail; it
only has to be consistent between the two packings being XORed.
"""

import os

import numpy as np

from . import numpy_backend

try:
    from . import numba_backend

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on broken installs
    numba_backend = None
    HAS_NUMBA = False

ENV_VAR = "KVCRUSH_BACKEND"


def get_backend():
    """Resolve the active backend module from the environment."""
    choice = os.environ.get(ENV_VAR, "").strip().lower()
    if choice == "numpy":
        return numpy_backend
    if choice == "numba":
        if not HAS_NUMBA:
            raise RuntimeError("KVCRUSH_BACKEND=numba but numba is not importable")
        return numba_backend
    return numba_backend if HAS_NUMBA else numpy_backend


def active_backend_name():
    return get_backend().NAME


def pack_bits(bits):
    """Pack a (n, width) uint8 0/1 matrix into (n, words) uint64.

    Trailing bits of the last word are zero, so equal-width packings are
    XOR-compatible and padding never contributes to a popcount.
    """
    bits = np.ascontiguousarray(bits, dtype=np.uint8)
    n, width = bits.shape
    words = max(1, (width + 63) // 64)
    padded = np.zeros((n, words * 64), dtype=np.uint8)
    padded[:, :width] = bits
    return np.packbits(padded, axis=1).view(np.uint64).reshape(n, words)


def hamming_to_ref(packed, ref):
    """Hamming distance from every packed row to one packed reference row."""
    return get_backend().hamming_to_ref(packed, ref)


def hamming_paired(a, b):
    """Row-wise Hamming distance between two equal-shape packed matrices."""
    return get_backend().hamming_paired(a, b)


def bucket_bit_counts(bits, bucket_of, n_buckets):
    """Per-bucket column sums of a uint8 bit matrix."""
    return get_backend().bucket_bit_counts(bits, bucket_of, n_buckets)


def warm_up():
    """Trigger JIT compilation of the numba kernels (no-op for numpy)."""
    if not HAS_NUMBA:
        return
    bits = np.array([[1, 0, 1], [0, 1, 1]], dtype=np.uint8)
    packed = pack_bits(bits)
    numba_backend.hamming_to_ref(packed, packed[0])
    numba_backend.hamming_paired(packed, packed)
    numba_backend.bucket_bit_counts(bits, np.array([0, 1], dtype=np.int64), 2)
