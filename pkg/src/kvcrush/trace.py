"""Attention trace model and binary trace file I/O.

A trace stores the per-layer, per-head query and key tensors captured
from (or synthesized for) a single prefill, so attention can be replayed
offline without the model. Values are always float32; the header's
``precision`` field records the deployment's bytes-per-element for memory
accounting only.

Wire layout (all integers little-endian u32 unless noted):

    magic   b"KVCR"
    version u32 (currently 1)
    num_layers, num_heads, head_dim, seq_len, precision   u32 each
    name_len u32, then name_len bytes of UTF-8 model name
    for layer in 0..num_layers:
      for head in 0..num_heads:
        Q  seq_len * head_dim float32, row-major
        K  seq_len * head_dim float32, row-major
    optional: b"LBLS" then seq_len u32 ground-truth cluster labels

A file round-trips byte-identically: read(write(t)) == t bitwise.
"""

import dataclasses
import math
import struct

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidSpec,
    IoFailure,
    MalformedHeader,
    NonFiniteValue,
    OverflowExceedsAddressSpace,
)

TRACE_MAGIC = b"KVCR"
TRACE_VERSION = 1
LABELS_MAGIC = b"LBLS"

VALID_PRECISIONS = (2, 4)

# Planted-structure gains for the synthetic generator. Query scale is
# multiplied by sqrt(head_dim) so the logit margins survive the 1/sqrt(d)
# attention scaling regardless of head_dim.
_CLUSTER_GAIN = 8.0
_QUERY_NOISE = 0.2
_SINK_GAIN = 2.0
_SINK_QUERY_GAIN = 4.0
_RECENCY_GAIN = 2.5
_RECENCY_QUERY_GAIN = 2.5


@dataclasses.dataclass(frozen=True)
class TraceHeader:
    """Metadata block at the front of every trace file."""

    model_name: str
    num_layers: int
    num_heads: int
    head_dim: int
    seq_len: int
    precision: int = 2

    def validate(self):
        for field in ("num_layers", "num_heads", "head_dim", "seq_len"):
            if getattr(self, field) < 1:
                raise MalformedHeader(f"{field} must be >= 1, got {getattr(self, field)}")
        if self.precision not in VALID_PRECISIONS:
            raise MalformedHeader(
                f"precision must be one of {VALID_PRECISIONS}, got {self.precision}"
            )


@dataclasses.dataclass
class AttentionTrace:
    """Header plus (layers, heads, seq, dim) float32 query/key tensors.

    ``labels`` carries the generator's planted cluster id per token when
    the trace is synthetic, and is None for captured traces.
    """

    header: TraceHeader
    queries: np.ndarray
    keys: np.ndarray
    labels: np.ndarray | None = None

    def q(self, layer, head):
        return self.queries[layer, head]

    def k(self, layer, head):
        return self.keys[layer, head]

    def validate(self):
        self.header.validate()
        h = self.header
        want = (h.num_layers, h.num_heads, h.seq_len, h.head_dim)
        for name, arr in (("queries", self.queries), ("keys", self.keys)):
            if arr.shape != want:
                raise DimensionMismatch(f"{name} shape {arr.shape}, header implies {want}")
            if arr.dtype != np.float32:
                raise DimensionMismatch(f"{name} dtype {arr.dtype}, expected float32")
            if not np.isfinite(arr).all():
                lay, hd, row, col = np.argwhere(~np.isfinite(arr))[0]
                raise NonFiniteValue(
                    f"{name} has non-finite value at layer {lay} head {hd} "
                    f"row {row} col {col}"
                )
        if self.labels is not None and self.labels.shape != (h.seq_len,):
            raise DimensionMismatch(
                f"labels shape {self.labels.shape}, expected ({h.seq_len},)"
            )

    def __eq__(self, other):
        if not isinstance(other, AttentionTrace):
            return NotImplemented
        if self.header != other.header:
            return False
        if not (
            np.array_equal(self.queries, other.queries)
            and np.array_equal(self.keys, other.keys)
        ):
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        return self.labels is None or np.array_equal(self.labels, other.labels)


@dataclasses.dataclass(frozen=True)
class SyntheticSpec:
    """Knobs for the synthetic trace generator.

    ``cluster_spread`` is the expected key-noise norm relative to the
    unit-norm cluster centers (0 plants exact duplicates). ``sink_fraction``
    and ``recency_bias`` divert that fraction of heads to attention-sink
    and recency-dominated roles instead of cluster-preferring ones.
    """

    seq_len: int
    num_layers: int = 1
    num_heads: int = 8
    head_dim: int = 32
    num_clusters: int = 4
    cluster_spread: float = 0.1
    sink_fraction: float = 0.0
    recency_bias: float = 0.0
    rng_seed: int = 0
    model_name: str = "synthetic"

    def validate(self):
        if self.seq_len < 1 or self.num_layers < 1 or self.num_heads < 1 or self.head_dim < 1:
            raise InvalidSpec("seq_len, num_layers, num_heads, head_dim must all be >= 1")
        if not 1 <= self.num_clusters <= self.seq_len:
            raise InvalidSpec(
                f"num_clusters must be in [1, seq_len], got {self.num_clusters}"
            )
        if self.cluster_spread < 0:
            raise InvalidSpec(f"cluster_spread must be >= 0, got {self.cluster_spread}")
        for field in ("sink_fraction", "recency_bias"):
            v = getattr(self, field)
            if not 0.0 <= v <= 1.0:
                raise InvalidSpec(f"{field} must be in [0, 1], got {v}")


def _header_bytes(header):
    name = header.model_name.encode("utf-8")
    return (
        TRACE_MAGIC
        + struct.pack(
            "<6I",
            TRACE_VERSION,
            header.num_layers,
            header.num_heads,
            header.head_dim,
            header.seq_len,
            header.precision,
        )
        + struct.pack("<I", len(name))
        + name
    )


def write_trace(trace, path):
    """Serialize ``trace`` to ``path`` in canonical little-endian form.

    Raises NonFiniteValue before touching the file if any tensor value is
    NaN or infinite, and IoFailure if the OS rejects the write.
    """
    trace.validate()
    h = trace.header
    q = np.ascontiguousarray(trace.queries, dtype="<f4")
    k = np.ascontiguousarray(trace.keys, dtype="<f4")
    try:
        with open(path, "wb") as f:
            f.write(_header_bytes(h))
            for lay in range(h.num_layers):
                for hd in range(h.num_heads):
                    f.write(q[lay, hd].tobytes())
                    f.write(k[lay, hd].tobytes())
            if trace.labels is not None:
                f.write(LABELS_MAGIC)
                f.write(np.ascontiguousarray(trace.labels, dtype="<u4").tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write trace to {path}: {exc}") from exc


def read_trace(path):
    """Parse a trace file, validating structure and finiteness.

    Errors carry enough position detail to find the corruption: header
    problems raise MalformedHeader, payloads cut off mid-tensor raise
    DimensionMismatch naming the layer/head and byte offset, and NaN/inf
    values raise NonFiniteValue with their location.
    """
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as exc:
        raise IoFailure(f"cannot read trace from {path}: {exc}") from exc

    if len(blob) < 4 or blob[:4] != TRACE_MAGIC:
        raise MalformedHeader(f"bad magic {blob[:4]!r}, expected {TRACE_MAGIC!r}")
    if len(blob) < 4 + 6 * 4 + 4:
        raise MalformedHeader(f"header truncated at {len(blob)} bytes")
    version, layers, heads, dim, seq, prec = struct.unpack_from("<6I", blob, 4)
    if version != TRACE_VERSION:
        raise MalformedHeader(f"unsupported version {version}")
    (name_len,) = struct.unpack_from("<I", blob, 28)
    name_end = 32 + name_len
    if name_end > len(blob):
        raise MalformedHeader("model name extends past end of file")
    try:
        model_name = blob[32:name_end].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedHeader(f"model name is not valid UTF-8: {exc}") from exc

    header = TraceHeader(model_name, layers, heads, dim, seq, prec)
    header.validate()

    tensor_bytes = seq * dim * 4
    total = layers * heads * 2 * tensor_bytes
    body = blob[name_end:]
    if len(body) < total:
        # Locate which tensor the file ran out inside of.
        idx = len(body) // tensor_bytes
        lay, rem = divmod(idx, heads * 2)
        hd, which = divmod(rem, 2)
        tname = "K" if which else "Q"
        raise DimensionMismatch(
            f"payload truncated inside {tname} of layer {lay} head {hd} "
            f"(file offset {name_end + len(body)}, expected {name_end + total} bytes)"
        )

    flat = np.frombuffer(body[:total], dtype="<f4")
    if not np.isfinite(flat).all():
        bad = int(np.argmin(np.isfinite(flat)))
        per_tensor = seq * dim
        t_idx, inner = divmod(bad, per_tensor)
        lay, rem = divmod(t_idx, heads * 2)
        hd, which = divmod(rem, 2)
        tname = "K" if which else "Q"
        row, col = divmod(inner, dim)
        raise NonFiniteValue(
            f"non-finite value in {tname} of layer {lay} head {hd} "
            f"row {row} col {col} (file offset {name_end + bad * 4})"
        )
    stacked = flat.reshape(layers, heads, 2, seq, dim)
    queries = np.ascontiguousarray(stacked[:, :, 0])
    keys = np.ascontiguousarray(stacked[:, :, 1])

    rest = body[total:]
    labels = None
    if rest:
        if rest[:4] != LABELS_MAGIC or len(rest) != 4 + seq * 4:
            raise MalformedHeader(
                f"unexpected {len(rest)} trailing bytes after tensor payload"
            )
        labels = np.frombuffer(rest[4:], dtype="<u4").copy()

    trace = AttentionTrace(header, queries, keys, labels)
    trace.validate()
    return trace


def _taper_counts(n_items, n_groups):
    """Split n_items into n_groups integer counts proportional to
    (n_groups - g), largest-remainder rounded. Earlier groups get more."""
    weights = np.arange(n_groups, 0, -1, dtype=np.float64)
    exact = n_items * weights / weights.sum()
    counts = np.floor(exact).astype(np.int64)
    short = n_items - counts.sum()
    order = np.lexsort((np.arange(n_groups), -(exact - counts)))
    counts[order[:short]] += 1
    return counts


def gen_synthetic(spec):
    """Build a deterministic synthetic trace with planted structure.

    Keys are noisy copies of per-head unit-norm cluster centers, so the
    true grouping is known (returned in ``labels``). Head roles split
    three ways: cluster heads point their queries at one preferred center
    (head counts tapered across clusters so signatures differ), sink heads
    concentrate attention on the earliest tokens, and recency heads use a
    planted rotary pair so each query prefers the nearest preceding keys.

    Same spec, same trace, bit for bit.
    """
    spec.validate()
    rng = np.random.default_rng(spec.rng_seed)
    S, L, H, d = spec.seq_len, spec.num_layers, spec.num_heads, spec.head_dim
    C = spec.num_clusters

    labels = rng.permutation(np.arange(S, dtype=np.int64) % C).astype(np.uint32)

    n_sink = int(spec.sink_fraction * H)
    n_rec = min(int(spec.recency_bias * H), H - n_sink)
    n_cluster = H - n_sink - n_rec
    counts = _taper_counts(n_cluster, C) if n_cluster else np.zeros(C, dtype=np.int64)
    preferred = np.repeat(np.arange(C), counts)

    sink_len = max(1.0, 0.02 * S)
    sink_profile = np.exp(-np.arange(S) / sink_len)
    omega = math.pi / S
    phase = omega * np.arange(S)
    tau = _CLUSTER_GAIN * math.sqrt(d)

    queries = np.empty((L, H, S, d), dtype=np.float32)
    keys = np.empty((L, H, S, d), dtype=np.float32)
    for lay in range(L):
        for hd in range(H):
            centers = rng.standard_normal((C, d))
            centers /= np.linalg.norm(centers, axis=1, keepdims=True)
            k = centers[labels].copy()
            if spec.cluster_spread > 0:
                k += spec.cluster_spread * rng.standard_normal((S, d)) / math.sqrt(d)
            q = _QUERY_NOISE * math.sqrt(d) * rng.standard_normal((S, d))

            if hd < n_cluster:
                q += tau * centers[preferred[hd]]
            elif hd < n_cluster + n_sink:
                v = rng.standard_normal(d)
                v /= np.linalg.norm(v)
                k += _SINK_GAIN * sink_profile[:, None] * v
                q += _SINK_QUERY_GAIN * math.sqrt(d) * v
            else:
                # Rotary-style pair in the first two dims: the q.k product
                # contributes cos(omega * (t - j)), monotone in recency.
                k[:, 0] += _RECENCY_GAIN * np.cos(phase)
                if d > 1:
                    k[:, 1] += _RECENCY_GAIN * np.sin(phase)
                q[:, 0] += _RECENCY_QUERY_GAIN * math.sqrt(d) * np.cos(phase)
                if d > 1:
                    q[:, 1] += _RECENCY_QUERY_GAIN * math.sqrt(d) * np.sin(phase)

            queries[lay, hd] = q.astype(np.float32)
            keys[lay, hd] = k.astype(np.float32)

    header = TraceHeader(spec.model_name, L, H, d, S, precision=2)
    trace = AttentionTrace(header, queries, keys, labels)
    trace.validate()
    return trace


def kv_memory_bytes(header, batch_size):
    """KV cache footprint in bytes for a given batch.

    Two tensors (K and V) of num_layers * num_heads * seq_len * head_dim
    elements each, at ``precision`` bytes per element, per sequence in the
    batch. Computed in exact integer arithmetic; anything past 2**64 - 1
    cannot be addressed and raises OverflowExceedsAddressSpace.
    """
    header.validate()
    if batch_size < 1:
        raise InvalidSpec(f"batch_size must be >= 1, got {batch_size}")
    total = (
        2
        * batch_size
        * header.num_layers
        * header.num_heads
        * header.seq_len
        * header.head_dim
        * header.precision
    )
    if total >= 2**64:
        raise OverflowExceedsAddressSpace(
            f"{total} bytes exceeds the 64-bit address space"
        )
    return total
