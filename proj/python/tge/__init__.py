"""Python bindings for the colored mesh fidelity toolkit."""

from ._core import (
    FingerprintError,
    Mesh,
    Model,
    TgeError,
    confidence_interval,
    estimate_flops,
    krocc,
    load_mesh,
    make_primitive,
    metric_names,
    metrics,
    model_config,
    plcc,
    remove_outliers,
    sample_points,
    save_mesh,
    srocc,
)

__all__ = [
    "FingerprintError",
    "Mesh",
    "Model",
    "TgeError",
    "confidence_interval",
    "estimate_flops",
    "krocc",
    "load_mesh",
    "make_primitive",
    "metric_names",
    "metrics",
    "model_config",
    "plcc",
    "remove_outliers",
    "sample_points",
    "save_mesh",
    "srocc",
]
