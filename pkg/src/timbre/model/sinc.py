"""Learnable band-pass front-end built from differences of windowed sinc low-passes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

MIN_LOW_HZ = 1.0
MIN_BAND_HZ = 1.0


@dataclass(frozen=True)
class SincFrontendConfig:
    n_filters: int = 40
    kernel_len: int = 251
    stride: int = 5
    f_min: float = 30.0
    f_max: float = 8000.0
    sample_rate: int = 16000
    frame_ms: float = 25.0
    hop_ms: float = 10.0

    def validate(self) -> None:
        if self.kernel_len % 2 == 0 or self.kernel_len < 3:
            raise ValueError("kernel_len must be odd and >= 3")
        if not 0 < self.f_min < self.f_max <= self.sample_rate / 2:
            raise ValueError("need 0 < f_min < f_max <= sample_rate / 2")
        if self.n_filters < 1 or self.stride < 1:
            raise ValueError("n_filters and stride must be positive")
        if self.pool_frame < 1 or self.pool_hop < 1:
            raise ValueError("pooling frame/hop shorter than one strided sample")

    @property
    def pool_frame(self) -> int:
        """Pooling window in strided-conv output samples."""
        return int(round(self.frame_ms * 1e-3 * self.sample_rate / self.stride))

    @property
    def pool_hop(self) -> int:
        return int(round(self.hop_ms * 1e-3 * self.sample_rate / self.stride))

    def n_frames(self, n_samples: int) -> int:
        conv_len = (n_samples - 1) // self.stride + 1  # 'same' padding
        return (conv_len - self.pool_frame) // self.pool_hop + 1


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_init(n_filters: int, f_min: float, f_max: float) -> tuple[np.ndarray, np.ndarray]:
    """Band edges equally spaced on the mel scale.

    Returns:
        ``(low_hz, band_hz)``: filter ``i`` spans ``[edge_i, edge_{i+1}]``.
    """
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_filters + 1))
    edges[0], edges[-1] = f_min, f_max
    return edges[:-1].copy(), np.diff(edges)


def effective_cutoffs(low_hz: torch.Tensor, band_hz: torch.Tensor, sample_rate: float
                      ) -> tuple[torch.Tensor, torch.Tensor]:
    """Map unconstrained parameters to cutoffs with ``0 < f1 < f2 <= Nyquist``."""
    nyquist = sample_rate / 2.0
    f1 = torch.clamp(low_hz.abs(), MIN_LOW_HZ, nyquist - MIN_BAND_HZ)
    f2 = torch.clamp(f1 + torch.clamp(band_hz.abs(), min=MIN_BAND_HZ), max=nyquist)
    return f1, f2


def hamming(kernel_len: int, dtype=torch.float32) -> torch.Tensor:
    # Mirrored from the first half so the window is exactly symmetric.
    k = torch.arange((kernel_len + 1) // 2, dtype=dtype)
    half = 0.54 - 0.46 * torch.cos(2.0 * math.pi * k / (kernel_len - 1))
    return torch.cat([half, half[: kernel_len // 2].flip(0)])


def sinc_kernels(low_hz: torch.Tensor, band_hz: torch.Tensor, kernel_len: int,
                 sample_rate: float, *, window: bool = True, normalize: bool = True
                 ) -> torch.Tensor:
    """Band-pass kernel bank of shape ``(n_filters, kernel_len)``.

    ``g[n] = 2 f2 sinc(2 pi f2 n) - 2 f1 sinc(2 pi f1 n)`` with frequencies in
    cycles per sample. Only the positive half is computed and mirrored, so every
    kernel is exactly even. Each kernel is Hamming-windowed and divided by its peak
    magnitude unless ``window``/``normalize`` are switched off.
    """
    f1, f2 = effective_cutoffs(low_hz, band_hz, sample_rate)
    f1 = (f1 / sample_rate)[:, None]
    f2 = (f2 / sample_rate)[:, None]
    half = (kernel_len - 1) // 2
    n = torch.arange(1, half + 1, dtype=low_hz.dtype)[None, :]
    right = (torch.sin(2 * math.pi * f2 * n) - torch.sin(2 * math.pi * f1 * n)) / (math.pi * n)
    center = 2.0 * (f2 - f1)
    g = torch.cat([right.flip(1), center, right], dim=1)
    if window:
        g = g * hamming(kernel_len, low_hz.dtype)[None, :]
    if normalize:
        g = g / g.abs().amax(dim=1, keepdim=True)
    return g


class SincFrontend(nn.Module):
    """Strided sinc convolution, magnitude, average pooling and ``log1p``.

    Input ``(batch, samples)``; output ``(batch, 1, n_filters, frames)``.
    """

    def __init__(self, cfg: SincFrontendConfig) -> None:
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        low, band = mel_init(cfg.n_filters, cfg.f_min, cfg.f_max)
        self.low_hz = nn.Parameter(torch.tensor(low, dtype=torch.float32))
        self.band_hz = nn.Parameter(torch.tensor(band, dtype=torch.float32))

    def kernels(self) -> torch.Tensor:
        return sinc_kernels(self.low_hz, self.band_hz, self.cfg.kernel_len, self.cfg.sample_rate)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return frontend_forward(x, self.cfg, self.low_hz, self.band_hz)


def frontend_forward(x: torch.Tensor, cfg: SincFrontendConfig, low_hz: torch.Tensor,
                     band_hz: torch.Tensor) -> torch.Tensor:
    if x.dim() != 2:
        raise ValueError("expected (batch, samples) input")
    if x.shape[1] < cfg.kernel_len:
        raise ValueError(f"segment of {x.shape[1]} samples shorter than kernel ({cfg.kernel_len})")
    g = sinc_kernels(low_hz, band_hz, cfg.kernel_len, cfg.sample_rate).to(x.dtype)
    y = F.conv1d(x[:, None, :], g[:, None, :], stride=cfg.stride, padding=(cfg.kernel_len - 1) // 2)
    y = F.avg_pool1d(y.abs(), cfg.pool_frame, cfg.pool_hop)
    return torch.log1p(y)[:, None, :, :]
