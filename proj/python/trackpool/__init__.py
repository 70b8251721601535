"""Self-attention aggregation of face-track embeddings."""

from trackpool._core import (
    EncoderConfig,
    ModelWeights,
    aggregate,
    aggregate_multi,
    average_pool,
    build_mask,
    cosine_distance,
    encode,
    extract_tracks,
    gen_synthetic,
    greedy_postprocess,
    identity_count_mpe,
    l2_norm,
    layer_norm,
    positional_encoding,
    read_tracks,
    roc,
    select_component,
    softmax,
    tar_at_far,
    write_tracks,
)

__all__ = [
    "EncoderConfig",
    "ModelWeights",
    "aggregate",
    "aggregate_multi",
    "average_pool",
    "build_mask",
    "cosine_distance",
    "encode",
    "extract_tracks",
    "gen_synthetic",
    "greedy_postprocess",
    "identity_count_mpe",
    "l2_norm",
    "layer_norm",
    "positional_encoding",
    "read_tracks",
    "roc",
    "select_component",
    "softmax",
    "tar_at_far",
    "write_tracks",
]
