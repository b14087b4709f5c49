"""Anchor-based grouping of binary fingerprints.

The point of this module is picking representatives in linear time.
Instead of clustering the fingerprints directly, every fingerprint is
measured against a single anchor vector (one Hamming pass), the distance
range is cut into equal buckets, and each bucket elects the member
closest to its majority-bit centroid (a second Hamming pass). Total
distance work is exactly 2 ops per token, independent of how many
representatives are requested; the instrumented ``distance_ops`` counter
on every result makes that auditable.

``kmeans_oracle`` is the quality/latency yardstick: plain Lloyd k-means
on the same bits embedded as reals. It is deliberately the only
non-linear-time path in the package.
"""

import dataclasses
import enum

import numpy as np

from . import _kernels as kernels
from .errors import (
    EmptyInput,
    InconsistentAssignment,
    KTooLarge,
    LengthMismatch,
    ZeroBuckets,
)
from .fingerprint import Fingerprint, FingerprintSet


class AnchorStrategy(str, enum.Enum):
    RANDOM = "random"
    MEAN = "mean"
    ALTERNATING = "alternating"


@dataclasses.dataclass(frozen=True)
class Anchor:
    bits: np.ndarray
    strategy: AnchorStrategy


@dataclasses.dataclass(frozen=True)
class BucketAssignment:
    """Bucket id per fingerprint, plus the anchor distances behind it."""

    bucket_of: np.ndarray
    n_buckets: int
    distances: np.ndarray
    anchor: Anchor
    distance_ops: int


@dataclasses.dataclass(frozen=True)
class RepresentativeSet:
    """Selected representative positions, ascending.

    ``indices`` index into the fingerprint list that was grouped; the
    caller owns any mapping back to absolute token ids. ``source_bucket``
    is aligned with ``indices`` (or the center id for the k-means oracle).
    """

    indices: np.ndarray
    source_bucket: np.ndarray
    distance_ops: int


def _as_bits(fingerprints):
    """Normalize fingerprint input to a (n, width) uint8 matrix."""
    if isinstance(fingerprints, FingerprintSet):
        return fingerprints.bits
    if isinstance(fingerprints, np.ndarray):
        mat = np.ascontiguousarray(fingerprints != 0, dtype=np.uint8)
        if mat.ndim != 2:
            raise LengthMismatch(f"expected 2-D bit matrix, got shape {mat.shape}")
        return mat
    rows = list(fingerprints)
    if not rows:
        return np.zeros((0, 0), dtype=np.uint8)
    bits = [r.bits if isinstance(r, Fingerprint) else np.asarray(r) for r in rows]
    width = len(bits[0])
    for i, b in enumerate(bits):
        if len(b) != width:
            raise LengthMismatch(
                f"fingerprint {i} has width {len(b)}, expected {width}"
            )
    return np.ascontiguousarray(np.stack(bits) != 0, dtype=np.uint8)


def make_anchor(strategy, fingerprints=None, rng_seed=0, width=None):
    """Build the anchor vector a grouping pass measures against.

    RANDOM draws iid fair bits from ``rng_seed``, MEAN takes the per-bit
    majority of the given fingerprints (ties to 1), ALTERNATING is the
    fixed 0,1,0,1,... pattern. Width comes from the fingerprints when
    given, else from ``width``.
    """
    strategy = AnchorStrategy(strategy)
    bits = None if fingerprints is None else _as_bits(fingerprints)
    if width is None:
        if bits is None or bits.size == 0:
            raise EmptyInput("make_anchor needs fingerprints or an explicit width")
        width = bits.shape[1]

    if strategy is AnchorStrategy.RANDOM:
        anchor = np.random.default_rng(rng_seed).integers(0, 2, width, dtype=np.uint8)
    elif strategy is AnchorStrategy.MEAN:
        if bits is None or len(bits) == 0:
            raise EmptyInput("MEAN anchor needs at least one fingerprint")
        anchor = (2 * bits.sum(axis=0) >= len(bits)).astype(np.uint8)
    else:
        anchor = (np.arange(width) % 2).astype(np.uint8)
    return Anchor(bits=anchor, strategy=strategy)


def _one_row(x):
    if isinstance(x, Fingerprint):
        return np.ascontiguousarray(x.bits != 0, dtype=np.uint8)
    if isinstance(x, Anchor):
        return np.ascontiguousarray(x.bits != 0, dtype=np.uint8)
    return np.ascontiguousarray(np.asarray(x) != 0, dtype=np.uint8)


def hamming(a, b):
    """Hamming distance between two equal-width fingerprints.

    Goes through the packed-word XOR + popcount kernels, same as the bulk
    paths, so a distance computed here is bit-for-bit what grouping uses.
    """
    ra, rb = _one_row(a), _one_row(b)
    if ra.shape != rb.shape:
        raise LengthMismatch(f"widths differ: {ra.shape} vs {rb.shape}")
    pa = kernels.pack_bits(ra.reshape(1, -1))
    pb = kernels.pack_bits(rb.reshape(1, -1))
    return int(kernels.hamming_paired(pa, pb)[0])


def bucketize(fingerprints, anchor, n_buckets):
    """Assign every fingerprint to one of ``n_buckets`` distance bands.

    bucket(t) = min(n_buckets - 1, d_t * n_buckets // (width + 1)) where
    d_t is Hamming distance to the anchor, so the width + 1 possible
    distances spread evenly and equal distances always share a bucket.
    One distance op per fingerprint.
    """
    if n_buckets < 1:
        raise ZeroBuckets(f"n_buckets must be >= 1, got {n_buckets}")
    bits = _as_bits(fingerprints)
    if len(bits) == 0:
        raise EmptyInput("bucketize needs at least one fingerprint")
    if anchor.bits.shape[0] != bits.shape[1]:
        raise LengthMismatch(
            f"anchor width {anchor.bits.shape[0]} != fingerprint width {bits.shape[1]}"
        )
    packed = kernels.pack_bits(bits)
    ref = kernels.pack_bits(anchor.bits.reshape(1, -1))[0]
    dist = kernels.hamming_to_ref(packed, ref)
    bucket_of = np.minimum(n_buckets - 1, dist * n_buckets // (bits.shape[1] + 1))
    return BucketAssignment(
        bucket_of=bucket_of.astype(np.int64),
        n_buckets=n_buckets,
        distances=dist,
        anchor=anchor,
        distance_ops=len(bits),
    )


def select_representatives(fingerprints, assignment):
    """Pick one representative per non-empty bucket.

    The bucket centroid is the per-bit majority (ties to 1); the
    representative is the member nearest the centroid by Hamming
    distance, lowest token position on ties. One distance op per
    fingerprint.
    """
    bits = _as_bits(fingerprints)
    n = len(bits)
    bucket_of = assignment.bucket_of
    if len(bucket_of) != n:
        raise InconsistentAssignment(
            f"assignment covers {len(bucket_of)} fingerprints, got {n}"
        )
    if n and (bucket_of.min() < 0 or bucket_of.max() >= assignment.n_buckets):
        raise InconsistentAssignment("bucket ids outside [0, n_buckets)")

    sizes = np.bincount(bucket_of, minlength=assignment.n_buckets)
    ones = kernels.bucket_bit_counts(bits, bucket_of, assignment.n_buckets)
    centroids = (2 * ones >= sizes[:, None]).astype(np.uint8)

    packed = kernels.pack_bits(bits)
    packed_cent = kernels.pack_bits(centroids)
    dist = kernels.hamming_paired(packed, packed_cent[bucket_of])

    order = np.lexsort((np.arange(n), dist, bucket_of))
    sorted_buckets = bucket_of[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sorted_buckets[1:] != sorted_buckets[:-1]
    winners = order[first]

    sel = np.sort(winners)
    return RepresentativeSet(
        indices=sel.astype(np.int64),
        source_bucket=bucket_of[sel].astype(np.int64),
        distance_ops=n,
    )


def kvcrush_group(fingerprints, n_reps, strategy=AnchorStrategy.RANDOM, rng_seed=0):
    """Full grouping pass: anchor, bucketize, elect representatives.

    Returns at most ``n_reps`` representatives (fewer when buckets come
    up empty) using exactly 2 distance ops per fingerprint, reported in
    ``distance_ops``.
    """
    bits = _as_bits(fingerprints)
    if len(bits) == 0:
        raise EmptyInput("kvcrush_group needs at least one fingerprint")
    anchor = make_anchor(strategy, bits, rng_seed=rng_seed)
    assignment = bucketize(bits, anchor, n_reps)
    reps = select_representatives(bits, assignment)
    return RepresentativeSet(
        indices=reps.indices,
        source_bucket=reps.source_bucket,
        distance_ops=assignment.distance_ops + reps.distance_ops,
    )


def kmeans_oracle(fingerprints, k, iters=100, rng_seed=0):
    """Lloyd k-means on the fingerprints as real vectors; quality yardstick.

    Seeded k-means++ init, squared-Euclidean assignments (argmin takes the
    lowest center id on ties), empty clusters keep their previous center,
    and iteration stops early once assignments are stable. The
    representative for each non-empty cluster is the member nearest its
    final center, earliest position on ties. ``distance_ops`` counts every
    point-center distance, which is what makes the 2-ops-per-token
    grouping pass worth having.
    """
    bits = _as_bits(fingerprints)
    n = len(bits)
    if n == 0:
        raise EmptyInput("kmeans_oracle needs at least one fingerprint")
    if k < 1:
        raise ZeroBuckets(f"k must be >= 1, got {k}")
    if k > n:
        raise KTooLarge(f"k={k} exceeds {n} fingerprints")

    X = bits.astype(np.float64)
    rng = np.random.default_rng(rng_seed)
    ops = 0

    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    ops += n
    for j in range(1, k):
        tot = d2.sum()
        if tot > 0:
            pick = rng.choice(n, p=d2 / tot)
        else:
            pick = rng.integers(n)
        centers[j] = X[pick]
        d2 = np.minimum(d2, ((X - centers[j]) ** 2).sum(axis=1))
        ops += n

    x2 = (X * X).sum(axis=1)[:, None]

    def dist_table():
        c2 = (centers * centers).sum(axis=1)[None, :]
        return np.maximum(x2 - 2.0 * (X @ centers.T) + c2, 0.0)

    assign = None
    for _ in range(iters):
        D = dist_table()
        ops += n * k
        new_assign = D.argmin(axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = assign == c
            if members.any():
                centers[c] = X[members].mean(axis=0)

    D = dist_table()
    ops += n * k
    reps = []
    cluster_of = {}
    for c in range(k):
        members = np.flatnonzero(assign == c)
        if members.size == 0:
            continue
        rep = int(members[np.argmin(D[members, c])])
        reps.append(rep)
        cluster_of[rep] = c
    sel = np.sort(np.asarray(reps, dtype=np.int64))
    return RepresentativeSet(
        indices=sel,
        source_bucket=np.asarray([cluster_of[i] for i in sel], dtype=np.int64),
        distance_ops=ops,
    )
