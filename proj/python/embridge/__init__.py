"""Embedding-level bridging: python surface over the C++ core."""

from ._core import (
    BridgeError,
    align_part,
    anchor_direction,
    combined_loss,
    cosine_sim,
    default_config,
    info_nce,
    info_nce_grad,
    lambda_bound,
    neg_part,
    normalize,
    osr_loss,
    project_orthogonal,
    recall_at_k,
    run_experiment,
    top1_zero_shot,
    verify_lemma,
    world_summary,
)

__all__ = [
    "BridgeError",
    "align_part",
    "anchor_direction",
    "combined_loss",
    "cosine_sim",
    "default_config",
    "info_nce",
    "info_nce_grad",
    "lambda_bound",
    "neg_part",
    "normalize",
    "osr_loss",
    "project_orthogonal",
    "recall_at_k",
    "run_experiment",
    "top1_zero_shot",
    "verify_lemma",
    "world_summary",
]
