"""Run a prompt through a GPT-2 family model and record per-head Q/K.

The captured matrices are written in the portable trace format consumed
by downstream cache-compression tooling: little-endian, magic ``KVCR``,
version, five u32 dims (layers, heads, head_dim, seq_len, precision), a
length-prefixed UTF-8 model name, then for each layer and head the
query and key matrices as row-major float32. The encoder here is
self-contained on purpose; nothing in this package imports the consumer.

Q and K are taken at the attention input projection (``c_attn``), after
layer norm and after the model has already mixed in its absolute
position embeddings, so a plain causal softmax of QK^T / sqrt(d) on the
exported matrices reproduces the model's own attention probabilities.
"""

import dataclasses
import math
import struct

import numpy as np
import torch

from .errors import ContextOverflow, IoFailure, ModelLoadFailure

TRACE_MAGIC = b"KVCR"
TRACE_VERSION = 1


@dataclasses.dataclass(frozen=True)
class ExportJob:
    """One export request.

    ``model`` is a local directory or hub id accepted by transformers.
    ``prompt`` is the token id sequence to run (no tokenizer involved;
    callers bring their own ids). ``precision`` is the modeled bytes per
    cache element recorded in the header for memory accounting; the
    payload itself is always float32.
    """

    model: str
    prompt: tuple
    out: str
    precision: int = 2
    model_name: str = ""

    def validate(self):
        if len(self.prompt) == 0:
            raise ValueError("prompt must contain at least one token id")
        for t in self.prompt:
            if int(t) != t or t < 0:
                raise ValueError(f"prompt token ids must be non-negative integers, got {t!r}")
        if self.precision not in (2, 4):
            raise ValueError(f"precision must be 2 or 4, got {self.precision}")


def load_model(path_or_id):
    """Load an eval-mode causal LM with eager attention.

    Eager attention matters twice: it is the implementation whose
    probabilities the exported Q/K reproduce exactly, and it is the only
    one that honours output_attentions for cross-checks.
    """
    from transformers import AutoModelForCausalLM

    try:
        model = AutoModelForCausalLM.from_pretrained(
            path_or_id, attn_implementation="eager"
        )
    except Exception as exc:
        raise ModelLoadFailure(f"cannot load model {path_or_id!r}: {exc}") from exc
    blocks = getattr(getattr(model, "transformer", None), "h", None)
    if blocks is None or any(not hasattr(b.attn, "c_attn") for b in blocks):
        raise ModelLoadFailure(
            f"model {path_or_id!r} has no GPT-2 style transformer.h[*].attn.c_attn stack"
        )
    model.eval()
    return model


def _context_limit(config):
    return getattr(config, "n_positions", None) or config.max_position_embeddings


def capture_qk(model, token_ids):
    """Forward the ids once and return (queries, keys) as (L, H, S, d)."""
    config = model.config
    limit = _context_limit(config)
    if len(token_ids) > limit:
        raise ContextOverflow(
            f"prompt has {len(token_ids)} tokens, model supports {limit}"
        )
    bad = [t for t in token_ids if t >= config.vocab_size]
    if bad:
        raise ValueError(
            f"token id {bad[0]} is outside the model vocabulary ({config.vocab_size})"
        )

    blocks = model.transformer.h
    n_layers = len(blocks)
    n_heads = config.n_head
    n_embd = config.n_embd
    head_dim = n_embd // n_heads
    seq_len = len(token_ids)

    captured = {}

    def grab(layer):
        def hook(_module, _args, output):
            captured[layer] = output.detach()
        return hook

    handles = [blocks[i].attn.c_attn.register_forward_hook(grab(i))
               for i in range(n_layers)]
    try:
        ids = torch.tensor([list(token_ids)], dtype=torch.long)
        with torch.no_grad():
            model(ids)
    finally:
        for h in handles:
            h.remove()

    queries = np.empty((n_layers, n_heads, seq_len, head_dim), dtype=np.float32)
    keys = np.empty_like(queries)
    for layer in range(n_layers):
        q, k, _v = captured[layer].split(n_embd, dim=-1)
        # (1, S, E) -> (H, S, d), the same split _split_heads applies.
        qh = q[0].view(seq_len, n_heads, head_dim).permute(1, 0, 2)
        kh = k[0].view(seq_len, n_heads, head_dim).permute(1, 0, 2)
        queries[layer] = qh.to(torch.float32).numpy()
        keys[layer] = kh.to(torch.float32).numpy()
    return queries, keys


def encode_trace(queries, keys, model_name, precision):
    """Serialize (L, H, S, d) query/key arrays to the wire format."""
    n_layers, n_heads, seq_len, head_dim = queries.shape
    name = model_name.encode("utf-8")
    parts = [
        TRACE_MAGIC,
        struct.pack("<6I", TRACE_VERSION, n_layers, n_heads, head_dim,
                    seq_len, precision),
        struct.pack("<I", len(name)),
        name,
    ]
    for layer in range(n_layers):
        for head in range(n_heads):
            parts.append(np.ascontiguousarray(queries[layer, head], dtype="<f4").tobytes())
            parts.append(np.ascontiguousarray(keys[layer, head], dtype="<f4").tobytes())
    return b"".join(parts)


def export_trace(job):
    """Run the job end to end and return a small summary dict."""
    job.validate()
    model = load_model(job.model)
    queries, keys = capture_qk(model, tuple(int(t) for t in job.prompt))
    name = job.model_name or str(job.model)
    blob = encode_trace(queries, keys, name, job.precision)
    try:
        with open(job.out, "wb") as f:
            f.write(blob)
    except OSError as exc:
        raise IoFailure(f"cannot write trace to {job.out}: {exc}") from exc
    n_layers, n_heads, seq_len, head_dim = queries.shape
    return {
        "out": job.out,
        "bytes": len(blob),
        "num_layers": n_layers,
        "num_heads": n_heads,
        "head_dim": head_dim,
        "seq_len": seq_len,
    }


def reference_attention(queries, keys):
    """Causal softmax probabilities for one (S, d) query/key pair.

    Used by consumers of this module to sanity-check an export against
    the model's own attention output without importing anything heavier.
    """
    S, d = queries.shape
    logits = queries @ keys.T / math.sqrt(d)
    logits[np.triu_indices(S, k=1)] = -np.inf
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs[np.triu_indices(S, k=1)] = 0.0
    return probs / probs.sum(axis=1, keepdims=True)
