"""Numba-compiled bit kernels.

Popcount is the SWAR reduction over uint64 words; numba has no intrinsic
for it and numpy's bitwise_count is not supported in nopython mode. All
masks and shift amounts are pre-built np.uint64 scalars so the arithmetic
stays in uint64 instead of promoting.
"""

import numpy as np
from numba import njit

NAME = "numba"

_M1 = np.uint64(0x5555555555555555)
_M2 = np.uint64(0x3333333333333333)
_M4 = np.uint64(0x0F0F0F0F0F0F0F0F)
_H01 = np.uint64(0x0101010101010101)
_S1 = np.uint64(1)
_S2 = np.uint64(2)
_S4 = np.uint64(4)
_S56 = np.uint64(56)


@njit(cache=True)
def _popcount64(x):
    x = x - ((x >> _S1) & _M1)
    x = (x & _M2) + ((x >> _S2) & _M2)
    x = (x + (x >> _S4)) & _M4
    return (x * _H01) >> _S56


@njit(cache=True)
def hamming_to_ref(packed, ref):
    n, words = packed.shape
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        acc = np.uint64(0)
        for j in range(words):
            acc += _popcount64(packed[i, j] ^ ref[j])
        out[i] = acc
    return out


@njit(cache=True)
def hamming_paired(a, b):
    n, words = a.shape
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        acc = np.uint64(0)
        for j in range(words):
            acc += _popcount64(a[i, j] ^ b[i, j])
        out[i] = acc
    return out


@njit(cache=True)
def bucket_bit_counts(bits, bucket_of, n_buckets):
    n, width = bits.shape
    out = np.zeros((n_buckets, width), dtype=np.int64)
    for i in range(n):
        b = bucket_of[i]
        for h in range(width):
            out[b, h] += bits[i, h]
    return out
