"""Pure-numpy bit kernels. Reference semantics for the numba backend."""

import numpy as np

NAME = "numpy"


def hamming_to_ref(packed, ref):
    return np.bitwise_count(packed ^ ref[None, :]).sum(axis=1).astype(np.int64)


def hamming_paired(a, b):
    return np.bitwise_count(a ^ b).sum(axis=1).astype(np.int64)


def bucket_bit_counts(bits, bucket_of, n_buckets):
    out = np.zeros((n_buckets, bits.shape[1]), dtype=np.int64)
    np.add.at(out, bucket_of, bits.astype(np.int64))
    return out
