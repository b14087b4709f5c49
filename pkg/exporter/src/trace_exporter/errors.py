class ExporterError(Exception):
    """Base class for everything this package raises on purpose."""


class ModelLoadFailure(ExporterError):
    """The model could not be loaded or has no GPT-2 style attention stack."""


class ContextOverflow(ExporterError):
    """The prompt is longer than the model's position table."""


class IoFailure(ExporterError):
    """Writing the trace file failed."""
