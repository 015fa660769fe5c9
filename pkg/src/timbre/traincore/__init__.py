"""Gradients, losses, optimizer, schedule and the two training drivers."""

from timbre.traincore.autodiff import REGISTRY, backward, finite_diff_check
from timbre.traincore.config import RunConfig
from timbre.traincore.drivers import TrainResult, finetune, load_corpus, pretrain
from timbre.traincore.losses import bce_loss, ce_loss_soft, smooth_targets
from timbre.traincore.optim import AdamState, Schedule, adam_step, lr_at

__all__ = [
    "REGISTRY", "AdamState", "RunConfig", "Schedule", "TrainResult", "adam_step", "backward",
    "bce_loss", "ce_loss_soft", "finetune", "finite_diff_check", "load_corpus", "lr_at",
    "pretrain", "smooth_targets",
]
