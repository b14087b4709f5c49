"""Attention trace exporter for GPT-2 family models."""

from .errors import ContextOverflow, ExporterError, IoFailure, ModelLoadFailure
from .export import (
    TRACE_MAGIC,
    TRACE_VERSION,
    ExportJob,
    capture_qk,
    encode_trace,
    export_trace,
    load_model,
    reference_attention,
)

__version__ = "0.1.0"

__all__ = [
    "ContextOverflow",
    "ExportJob",
    "ExporterError",
    "IoFailure",
    "ModelLoadFailure",
    "TRACE_MAGIC",
    "TRACE_VERSION",
    "capture_qk",
    "encode_trace",
    "export_trace",
    "load_model",
    "reference_attention",
    "__version__",
]
