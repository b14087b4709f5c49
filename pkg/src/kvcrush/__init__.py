"""KV cache compression toolkit.

Replays attention from binary Q/K traces, ranks tokens with importance
baselines (h2o, snapkv, pyramidkv, static windows), fingerprints every
token as a bit vector of per-head keep decisions, and fills part of the
cache budget with representatives of the evicted set chosen by a
linear-time anchor grouping pass. A trace-driven evaluator reports how
much decode-time attention mass each decision preserves.
"""

from . import _kernels as kernels
from .baselines import (
    ImportanceRanking,
    Policy,
    PolicyConfig,
    h2o_rank,
    pyramid_budgets,
    rank_tokens,
    snapkv_rank,
    window_select,
)
from .errors import KVCrushError
from .evaluate import (
    EvalReport,
    LatencyReport,
    LatencyWorkload,
    evaluate,
    measure_latency,
)
from .fingerprint import (
    Fingerprint,
    FingerprintSet,
    attention_matrix,
    compute_fingerprints,
    head_scores,
)
from .grouping import (
    Anchor,
    AnchorStrategy,
    BucketAssignment,
    RepresentativeSet,
    bucketize,
    hamming,
    kmeans_oracle,
    kvcrush_group,
    make_anchor,
    select_representatives,
)
from .pipeline import (
    BudgetSpec,
    EvictionDecision,
    Granularity,
    LayerDecision,
    Provenance,
    chunked_select,
    kvcrush_select,
    page_fingerprint,
    page_importance,
    page_ranges,
    select_all,
)
from .trace import (
    AttentionTrace,
    SyntheticSpec,
    TraceHeader,
    gen_synthetic,
    kv_memory_bytes,
    read_trace,
    write_trace,
)

__version__ = "0.1.0"
