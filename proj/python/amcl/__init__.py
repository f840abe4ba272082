"""Python access to the amcl core: masks, contrastive loss, verification metrics."""

import torch  # noqa: F401  loads libtorch before the extension

from ._core import (
    ConfigError,
    ContractViolation,
    apply_mask,
    compute_eer,
    compute_roc,
    config_hash,
    contrastive_loss,
    cosine_similarity,
    sample_masks,
    synthetic_dataset,
)

__all__ = [
    "ConfigError",
    "ContractViolation",
    "apply_mask",
    "compute_eer",
    "compute_roc",
    "config_hash",
    "contrastive_loss",
    "cosine_similarity",
    "sample_masks",
    "synthetic_dataset",
]
