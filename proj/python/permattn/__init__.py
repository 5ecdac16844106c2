"""Permutation-encoded linear attention."""

from ._core import (
    ConfigError,
    DimensionError,
    NumericGuardError,
    TrainingError,
    UsageError,
    ValidationError,
    __version__,
    bench,
    causal_linear_attention,
    encode,
    feature_map,
    kernel_attention,
    order_stats,
    permutation_order,
    permuteformer_attention,
    sample_permutation,
    softmax_attention,
    train_probe,
    verify,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "NumericGuardError",
    "TrainingError",
    "UsageError",
    "ValidationError",
    "__version__",
    "bench",
    "causal_linear_attention",
    "encode",
    "feature_map",
    "kernel_attention",
    "order_stats",
    "permutation_order",
    "permuteformer_attention",
    "sample_permutation",
    "softmax_attention",
    "train_probe",
    "verify",
]
