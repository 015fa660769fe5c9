"""Reverse-mode gradients and a finite-difference verification harness.

Differentiation itself is delegated to ``torch.autograd``; this module fixes the
calling contract (named parameter leaves, deterministic order, scalar losses)
and registers every differentiable operation the model uses so each one can be
checked against central differences in float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
import torch
import torch.nn.functional as F

from timbre.model.network import lde_pool
from timbre.model.sinc import SincFrontendConfig, frontend_forward, mel_init, sinc_kernels
from timbre.traincore.losses import bce_loss, ce_loss_soft


def backward(loss: torch.Tensor, params: Mapping[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    """Gradients of a scalar ``loss`` for every named leaf, in sorted-name order.

    Leaves the loss does not depend on receive zero gradients.
    """
    if loss.dim() != 0:
        raise ValueError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    names = sorted(params)
    grads = torch.autograd.grad(loss, [params[n] for n in names], allow_unused=True)
    return {n: (torch.zeros_like(params[n]) if g is None else g) for n, g in zip(names, grads)}


@dataclass(frozen=True)
class RegisteredOp:
    """``fn(**inputs)`` returns a tensor; ``make_point(rng)`` draws float64 inputs."""

    fn: Callable[..., torch.Tensor]
    make_point: Callable[[np.random.Generator], dict[str, np.ndarray]]
    constants: Callable[[np.random.Generator], dict] | None = None
    eps: float = 1e-6


def _away_from(rng: np.random.Generator, shape, kink: float = 0.0, gap: float = 0.1) -> np.ndarray:
    x = rng.uniform(gap, 1.5, shape)
    return kink + x * rng.choice([-1.0, 1.0], shape)


def _bn(x, weight, bias):
    return F.batch_norm(x, None, None, weight, bias, training=True)


_FRONT = SincFrontendConfig(n_filters=4, kernel_len=31, stride=2, f_min=200.0, f_max=3000.0,
                            sample_rate=8000, frame_ms=2.0, hop_ms=1.0)


def _front_point(rng):
    low, band = mel_init(_FRONT.n_filters, _FRONT.f_min, _FRONT.f_max)
    return {"low_hz": low + rng.uniform(-5, 5, low.shape), "band_hz": band + rng.uniform(-5, 5, band.shape)}


def _front_constants(rng):
    return {"wave": torch.tensor(rng.uniform(-1, 1, (2, 120)))}


# Production-size front-end on a short excerpt.
_FULL_FRONT = SincFrontendConfig()


def _full_front_point(rng):
    low, band = mel_init(_FULL_FRONT.n_filters, _FULL_FRONT.f_min, _FULL_FRONT.f_max)
    return {"low_hz": low * rng.uniform(0.97, 1.03, low.shape),
            "band_hz": band * rng.uniform(0.97, 1.03, band.shape)}


def _full_front_constants(rng):
    return {"wave": torch.tensor(rng.uniform(-1, 1, (1, 1600)))}


def _softmax_targets(rng):
    t = rng.uniform(0, 1, (3, 5))
    return {"soft_targets": torch.tensor(t / t.sum(1, keepdims=True)), "smoothing": 0.05}


def _bce_targets(rng):
    return {"multi_hot": torch.tensor(rng.integers(0, 2, (3, 5)).astype(np.float64))}


REGISTRY: dict[str, RegisteredOp] = {
    "affine": RegisteredOp(
        lambda x, weight, bias: F.linear(x, weight, bias),
        lambda r: {"x": r.normal(size=(3, 4)), "weight": r.normal(size=(5, 4)), "bias": r.normal(size=5)},
        eps=1e-5),
    "conv1d": RegisteredOp(
        lambda x, weight: F.conv1d(x, weight, stride=2, padding=1),
        lambda r: {"x": r.normal(size=(2, 2, 11)), "weight": r.normal(size=(3, 2, 3))}),
    "conv2d": RegisteredOp(
        lambda x, weight: F.conv2d(x, weight, stride=2, padding=1),
        lambda r: {"x": r.normal(size=(2, 2, 5, 6)), "weight": r.normal(size=(3, 2, 3, 3))}),
    "batch_norm": RegisteredOp(
        _bn,
        lambda r: {"x": r.normal(size=(4, 3, 2, 3)), "weight": r.uniform(0.5, 1.5, 3),
                   "bias": r.normal(size=3)}),
    "relu": RegisteredOp(F.relu, lambda r: {"input": _away_from(r, (4, 5))}),
    "leaky_relu": RegisteredOp(lambda input: F.leaky_relu(input, 0.1),
                               lambda r: {"input": _away_from(r, (4, 5))}),
    "abs": RegisteredOp(torch.abs, lambda r: {"input": _away_from(r, (4, 5))}),
    "avg_pool": RegisteredOp(lambda x: F.avg_pool1d(x, 4, 2),
                             lambda r: {"x": r.normal(size=(2, 3, 12))}),
    "log1p": RegisteredOp(torch.log1p, lambda r: {"input": r.uniform(-0.5, 3.0, (4, 5))}),
    "softmax_ce": RegisteredOp(
        lambda logits, soft_targets, smoothing: ce_loss_soft(logits, soft_targets, smoothing),
        lambda r: {"logits": r.normal(size=(3, 5))}, _softmax_targets),
    "sigmoid_bce": RegisteredOp(
        lambda logits, multi_hot: bce_loss(logits, multi_hot),
        lambda r: {"logits": r.normal(size=(3, 5)) * 3}, _bce_targets),
    "lde": RegisteredOp(
        lambda x, centers, smoothing_raw: lde_pool(x, centers, smoothing_raw),
        lambda r: {"x": r.normal(size=(2, 6, 4)), "centers": r.normal(size=(3, 4)),
                   "smoothing_raw": r.normal(size=3) * 0.3}),
    "sinc_kernels": RegisteredOp(
        lambda low_hz, band_hz: sinc_kernels(low_hz, band_hz, _FRONT.kernel_len, _FRONT.sample_rate),
        _front_point, eps=1e-4),
    "sinc_frontend": RegisteredOp(
        lambda low_hz, band_hz, wave: frontend_forward(wave, _FRONT, low_hz, band_hz),
        _front_point, _front_constants, eps=1e-4),
    "sinc_frontend_full": RegisteredOp(
        lambda low_hz, band_hz, wave: frontend_forward(wave, _FULL_FRONT, low_hz, band_hz),
        _full_front_point, _full_front_constants, eps=1e-3),
}


def finite_diff_check(op_name: str, point: Mapping[str, np.ndarray] | None = None,
                      eps: float | None = None, *, seed: int = 0) -> float:
    """Worst relative disagreement between autograd and central differences.

    The op's output is reduced to a scalar through a fixed random projection. For
    each input the error is ``max|analytic - numeric| / max(|analytic|, |numeric|)``
    (infinity norms); the largest over inputs is returned.

    Raises:
        KeyError: ``op_name`` is not registered.
    """
    if op_name not in REGISTRY:
        raise KeyError(f"unknown op {op_name!r}; registered: {sorted(REGISTRY)}")
    op = REGISTRY[op_name]
    rng = np.random.default_rng(seed)
    point = dict(op.make_point(rng) if point is None else point)
    consts = op.constants(rng) if op.constants else {}
    eps = op.eps if eps is None else eps
    leaves = {k: torch.tensor(np.asarray(v, dtype=np.float64), requires_grad=True)
              for k, v in point.items()}
    out = op.fn(**leaves, **consts)
    proj = torch.tensor(rng.normal(size=tuple(out.shape)), dtype=torch.float64)

    def scalar(values: Mapping[str, torch.Tensor]) -> torch.Tensor:
        return (op.fn(**values, **consts) * proj).sum()

    grads = backward((out * proj).sum(), leaves)
    worst = 0.0
    with torch.no_grad():
        for name, leaf in leaves.items():
            base = {k: v.detach() for k, v in leaves.items()}
            numeric = torch.zeros_like(leaf)
            flat = numeric.view(-1)
            for i in range(leaf.numel()):
                plus = leaf.detach().clone()
                minus = leaf.detach().clone()
                plus.view(-1)[i] += eps
                minus.view(-1)[i] -= eps
                f_plus = scalar({**base, name: plus})
                f_minus = scalar({**base, name: minus})
                flat[i] = (f_plus - f_minus) / (2 * eps)
            analytic = grads[name]
            scale = max(analytic.abs().max().item(), numeric.abs().max().item(), 1e-300)
            worst = max(worst, (analytic - numeric).abs().max().item() / scale)
    return worst
