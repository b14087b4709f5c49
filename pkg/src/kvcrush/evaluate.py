"""Decision quality and latency measurement.

Fidelity is scored against replayed attention on decode-proxy rows (the
last min(64, seq_len) query positions, the ones decoding would extend):

* attention_mass_retained - fraction of each proxy row's probability
  mass landing on retained tokens, averaged over rows and heads. It is
  computed as 1 minus the evicted mass, so full retention is exactly 1.0
  and growing the retained set can only increase it.
* renormalized_output_error - L2 distance between the full attention row
  and the row restricted to retained tokens then renormalized (evicted
  positions contributing zero). Full retention skips the division and is
  exactly 0.0.

Latency comes from wall-clock medians over repeated runs, including a
sequence-length scaling series for the grouping pass.
"""

import dataclasses
import json
import statistics
import time

import numpy as np

from . import _kernels as kernels
from .errors import EmptyInput, IndexOutOfRange, ShapeMismatch
from .fingerprint import attention_matrix
from .grouping import AnchorStrategy, kmeans_oracle, kvcrush_group
from .pipeline import BudgetSpec, kvcrush_select
from .trace import SyntheticSpec, gen_synthetic

DECODE_PROXY_ROWS = 64

PHASES = ("scoring", "fingerprint", "grouping", "merge")


@dataclasses.dataclass
class LayerEval:
    layer: int
    n_retained: int
    attention_mass_retained: float
    renormalized_output_error: float
    compression_ratio: float


@dataclasses.dataclass
class EvalReport:
    layers: list
    attention_mass_retained: float
    renormalized_output_error: float
    compression_ratio: float
    phase_ns: dict
    distance_ops: int

    def to_json(self):
        return json.dumps(
            {
                "aggregate": {
                    "attention_mass_retained": self.attention_mass_retained,
                    "renormalized_output_error": self.renormalized_output_error,
                    "compression_ratio": self.compression_ratio,
                    "phase_ns": self.phase_ns,
                    "distance_ops": self.distance_ops,
                },
                "layers": [dataclasses.asdict(l) for l in self.layers],
            },
            indent=2,
        )

    def to_csv(self):
        header = (
            "layer,n_retained,attention_mass_retained,"
            "renormalized_output_error,compression_ratio"
        )
        rows = [header]
        for l in self.layers:
            rows.append(
                f"{l.layer},{l.n_retained},{l.attention_mass_retained:.9f},"
                f"{l.renormalized_output_error:.9f},{l.compression_ratio:.9f}"
            )
        return "\n".join(rows) + "\n"


def _layer_fidelity(trace, layer, retained, causal, attn=None):
    S = trace.header.seq_len
    H = trace.header.num_heads
    n_rows = min(DECODE_PROXY_ROWS, S)
    row_lo = S - n_rows

    keep = np.zeros(S, dtype=bool)
    keep[retained] = True
    evicted = ~keep
    full_retention = not evicted.any()

    mass_acc = 0.0
    err_acc = 0.0
    for h in range(H):
        a = attn[h] if attn is not None else attention_matrix(
            trace.q(layer, h), trace.k(layer, h), causal=causal
        )
        rows = a[row_lo:]
        if full_retention:
            mass_acc += float(n_rows)
            continue
        evicted_mass = rows[:, evicted].sum(axis=1)
        mass = 1.0 - evicted_mass
        mass_acc += float(mass.sum())

        kept_rows = rows * keep[None, :]
        kept_mass = rows[:, keep].sum(axis=1)
        safe = np.where(kept_mass > 0.0, kept_mass, 1.0)
        renorm = kept_rows / safe[:, None]
        err_acc += float(np.linalg.norm(renorm - rows, axis=1).sum())

    denom = H * n_rows
    mass = min(1.0, max(0.0, mass_acc / denom))
    return mass, err_acc / denom


def evaluate(trace, decision, causal=True, attn=None):
    """Score an eviction decision against its trace.

    ``decision`` must cover the same sequence length; retained indices
    outside [0, seq_len) raise IndexOutOfRange. ``attn`` optionally maps
    layer -> list of per-head matrices to skip the replay.
    """
    S = trace.header.seq_len
    if decision.seq_len != S:
        raise ShapeMismatch(
            f"decision covers seq_len {decision.seq_len}, trace has {S}"
        )
    layer_evals = []
    phase_totals = {p: 0 for p in PHASES}
    total_ops = 0
    for d in decision.layers:
        if len(d.retained) == 0:
            raise EmptyInput(f"layer {d.layer} retains no tokens")
        if d.retained.min() < 0 or d.retained.max() >= S:
            raise IndexOutOfRange(
                f"layer {d.layer} retains indices outside [0, {S})"
            )
        layer_attn = attn[d.layer] if attn is not None else None
        mass, err = _layer_fidelity(trace, d.layer, d.retained, causal, layer_attn)
        layer_evals.append(
            LayerEval(
                layer=d.layer,
                n_retained=len(d.retained),
                attention_mass_retained=mass,
                renormalized_output_error=err,
                compression_ratio=S / len(d.retained),
            )
        )
        for p in PHASES:
            phase_totals[p] += d.phase_ns.get(p, 0)
        total_ops += d.distance_ops

    n = len(layer_evals)
    return EvalReport(
        layers=layer_evals,
        attention_mass_retained=sum(l.attention_mass_retained for l in layer_evals) / n,
        renormalized_output_error=sum(l.renormalized_output_error for l in layer_evals) / n,
        compression_ratio=sum(l.compression_ratio for l in layer_evals) / n,
        phase_ns=phase_totals,
        distance_ops=total_ops,
    )


@dataclasses.dataclass(frozen=True)
class LatencyWorkload:
    """Shape of the timing run: random fingerprints at seq_len (and its
    2x / 4x multiples) for grouping, plus a small synthetic trace for the
    end-to-end phase breakdown."""

    seq_len: int = 4096
    width: int = 32
    n_buckets: int = 64
    kmeans_k: int = 64
    kmeans_iters: int = 100
    repetitions: int = 5
    rng_seed: int = 0
    anchor: AnchorStrategy = AnchorStrategy.RANDOM
    scale_factors: tuple = (1, 2, 4)
    pipeline_seq_len: int = 512
    include_kmeans: bool = True


@dataclasses.dataclass
class LatencyReport:
    backend: str
    phase_median_ns: dict
    grouping_scaling: list
    grouping_median_ns: int
    kmeans_median_ns: int
    distance_ops: int

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), indent=2)


def _median_ns(fn, reps):
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - t0)
    return int(statistics.median(samples))


def measure_latency(workload=None):
    """Wall-clock medians for the grouping pass and the full pipeline.

    Runs each measurement ``repetitions`` times (at least 5) and reports
    medians; the JIT backend is warmed first so compilation never lands
    in a sample. The scaling series times kvcrush_group on random
    fingerprints at seq_len * each scale factor.
    """
    w = workload or LatencyWorkload()
    reps = max(5, w.repetitions)
    rng = np.random.default_rng(w.rng_seed)
    kernels.warm_up()

    scaling = []
    base_median = None
    base_ops = 0
    for factor in w.scale_factors:
        n = w.seq_len * factor
        bits = rng.integers(0, 2, size=(n, w.width), dtype=np.uint8)
        kvcrush_group(bits, w.n_buckets, strategy=w.anchor, rng_seed=w.rng_seed)
        med = _median_ns(
            lambda b=bits: kvcrush_group(
                b, w.n_buckets, strategy=w.anchor, rng_seed=w.rng_seed
            ),
            reps,
        )
        scaling.append({"seq_len": n, "median_ns": med})
        if factor == 1:
            base_median = med
            base_ops = kvcrush_group(
                bits, w.n_buckets, strategy=w.anchor, rng_seed=w.rng_seed
            ).distance_ops

    kmeans_median = 0
    if w.include_kmeans:
        bits = rng.integers(0, 2, size=(w.seq_len, w.width), dtype=np.uint8)
        kmeans_median = _median_ns(
            lambda: kmeans_oracle(
                bits, w.kmeans_k, iters=w.kmeans_iters, rng_seed=w.rng_seed
            ),
            reps,
        )

    trace = gen_synthetic(
        SyntheticSpec(
            seq_len=w.pipeline_seq_len,
            num_heads=min(8, w.width),
            head_dim=16,
            rng_seed=w.rng_seed,
        )
    )
    budget = BudgetSpec(total=max(2, w.pipeline_seq_len // 4))
    phase_samples = {p: [] for p in PHASES}
    for _ in range(reps):
        d = kvcrush_select(trace, 0, budget, rng_seed=w.rng_seed)
        for p in PHASES:
            phase_samples[p].append(d.phase_ns[p])
    phase_median = {p: int(statistics.median(v)) for p, v in phase_samples.items()}

    return LatencyReport(
        backend=kernels.active_backend_name(),
        phase_median_ns=phase_median,
        grouping_scaling=scaling,
        grouping_median_ns=int(base_median),
        kmeans_median_ns=int(kmeans_median),
        distance_ops=int(base_ops),
    )
