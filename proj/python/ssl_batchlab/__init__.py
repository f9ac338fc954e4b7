"""Python bindings for the semi-supervised batch-sampling lab."""

import json as _json

from . import _core
from ._core import (
    CheckpointError,
    ConfigError,
    DivergenceError,
    InfeasibleError,
    IoError,
    SchemaError,
    SplitError,
    budget_samples,
    explicit_stream,
    export_plots,
    generate,
    implicit_epoch,
    labeled_per_batch,
    read_metrics,
    unsupervised_loss,
)


def _text(config):
    return config if isinstance(config, str) else _json.dumps(config)


def normalize_config(config):
    """Validate a run configuration (dict or JSON text) and fill in defaults."""
    return _json.loads(_core.normalize_config(_text(config)))


def run(config, out_dir, jobs=1):
    """Train every replicate of `config` into `out_dir`; returns the summary dict."""
    return _json.loads(_core.run(_text(config), str(out_dir), jobs))


def audit_sampler(config, steps=None):
    """Per-sample exposure rows and the labeled:unlabeled exposure ratio."""
    return _core.audit_sampler(_text(config), steps)


__all__ = [
    "CheckpointError", "ConfigError", "DivergenceError", "InfeasibleError", "IoError",
    "SchemaError", "SplitError", "audit_sampler", "budget_samples", "explicit_stream",
    "export_plots", "generate", "implicit_epoch", "labeled_per_batch", "normalize_config",
    "read_metrics", "run", "unsupervised_loss",
]
