"""Streaming test-time adaptation with anchored clustering.

Thin convenience layer over the compiled ``_core`` extension: incremental
Gaussian statistics, Gaussian KL alignment, source pretraining, anchor
freezing and the sequential adaptation engine.
"""

from ._core import (
    ConfigError,
    Model,
    NumericalError,
    RunningGaussian,
    SourceAnchors,
    ValidationError,
    batch_mle,
    clip_coefficient,
    compute_anchors,
    kl_gaussian,
    make_benchmark,
    train_source,
)
from ._core import run_stream as _run_stream

__all__ = [
    "ConfigError",
    "Model",
    "NumericalError",
    "RunningGaussian",
    "SourceAnchors",
    "ValidationError",
    "batch_mle",
    "clip_coefficient",
    "compute_anchors",
    "kl_gaussian",
    "make_benchmark",
    "run_stream",
    "train_source",
]


def _stringify(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def run_stream(model, anchors, inputs, labels, **config):
    """Stream ``inputs`` through the adaptation engine.

    Keyword arguments are engine config knobs (``lr=0.01``,
    ``strategy="filtered"``, ``adapt=False``, ...); values are stringified
    into the flat config the engine resolves, so anything the CLI accepts
    via --set works here too.
    """
    pairs = {key: _stringify(value) for key, value in config.items()}
    return _run_stream(model, anchors, inputs, list(labels), pairs)
