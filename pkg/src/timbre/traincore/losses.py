"""Pre-training and fine-tuning criteria."""

from __future__ import annotations

import torch
import torch.nn.functional as F


def smooth_targets(targets: torch.Tensor, smoothing: float) -> torch.Tensor:
    k = targets.shape[-1]
    return (1.0 - smoothing) * targets + smoothing / k


def ce_loss_soft(logits: torch.Tensor, soft_targets: torch.Tensor, smoothing: float = 0.0
                 ) -> torch.Tensor:
    """Batch-mean cross-entropy against soft targets blended toward uniform by ``smoothing``."""
    t = smooth_targets(soft_targets.to(logits.dtype), smoothing)
    return -(t * F.log_softmax(logits, dim=-1)).sum(-1).mean()


def bce_loss(logits: torch.Tensor, multi_hot: torch.Tensor) -> torch.Tensor:
    """Element-wise sigmoid cross-entropy, averaged over batch and labels.

    Uses ``max(x, 0) - x y + log1p(exp(-|x|))``, which never overflows.
    """
    y = multi_hot.to(logits.dtype)
    return (logits.clamp_min(0) - logits * y + torch.log1p(torch.exp(-logits.abs()))).mean()
