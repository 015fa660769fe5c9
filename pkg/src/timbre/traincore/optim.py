"""Adam with L2 weight decay, and the warmup-plus-cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import torch

from timbre.errors import TrainingFault


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)


def adam_step(params: Mapping[str, torch.Tensor], grads: Mapping[str, torch.Tensor],
              state: AdamState, lr: float, weight_decay: float = 0.0) -> AdamState:
    """One in-place Adam update with bias correction.

    Weight decay enters as ``wd * theta`` added to the gradient before the moment
    updates. Parameters are visited in sorted-name order.

    Raises:
        TrainingFault: a gradient contains NaN or Inf.
    """
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    with torch.no_grad():
        for name in sorted(params):
            p = params[name]
            g = grads.get(name)
            if g is None:
                continue
            if not torch.isfinite(g).all():
                raise TrainingFault(f"non-finite gradient for {name}")
            if g.shape != p.shape:
                raise ValueError(f"gradient shape mismatch for {name}")
            if weight_decay:
                g = g + weight_decay * p
            m = state.m.get(name)
            if m is None:
                m = state.m[name] = torch.zeros_like(p)
                state.v[name] = torch.zeros_like(p)
            v = state.v[name]
            m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
            v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
            denom = (v / c2).sqrt_().add_(state.eps)
            p.addcdiv_(m, denom, value=-lr / c1)
    return state


@dataclass(frozen=True)
class Schedule:
    max_lr: float
    warmup_epochs: float
    total_epochs: float
    steps_per_epoch: int

    def __post_init__(self) -> None:
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ValueError("need 0 <= warmup_epochs < total_epochs")
        if self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be positive")

    @property
    def warmup_steps(self) -> int:
        return int(round(self.warmup_epochs * self.steps_per_epoch))

    @property
    def total_steps(self) -> int:
        return int(round(self.total_epochs * self.steps_per_epoch))


def lr_at(step: int, schedule: Schedule) -> float:
    """Linear ramp from 0 over the warmup steps, then half-cosine decay to 0."""
    warm, total = schedule.warmup_steps, schedule.total_steps
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    if step < warm:
        return schedule.max_lr * step / warm
    if total == warm:
        return schedule.max_lr
    progress = (step - warm) / (total - warm)
    return schedule.max_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
