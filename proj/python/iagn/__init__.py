"""Python bindings for the iagn C++ core.

Arrays are numpy; images are (..., H, W) for shuffling and (C, u, v) or
(B, C, u, v) feature maps for the attention functions.
"""

from ._iagn import (
    ConfigError,
    DimensionError,
    SpecError,
    UsageError,
    attention_enhance,
    attention_map,
    channel_importance,
    combined_prediction,
    cross_entropy,
    generate_synthetic,
    kd_loss,
    load_manifest,
    make_pair,
    make_permutation,
    patch_sources,
    permutation_from_displacements,
    run_cli,
    shuffle_image,
    verify_pair,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "SpecError",
    "UsageError",
    "attention_enhance",
    "attention_map",
    "channel_importance",
    "combined_prediction",
    "cross_entropy",
    "generate_synthetic",
    "kd_loss",
    "load_manifest",
    "make_pair",
    "make_permutation",
    "patch_sources",
    "permutation_from_displacements",
    "run_cli",
    "shuffle_image",
    "verify_pair",
]
