"""Integrated loudness (ITU-R BS.1770-4) and loudness normalization.

Only integrated, single-channel program loudness is implemented; momentary
and short-term meters are not.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.signal import lfilter

from timbre.corpus.audio import Waveform
from timbre.errors import SilentSignalError

BLOCK_S = 0.4
OVERLAP = 0.75
ABSOLUTE_GATE = -70.0
RELATIVE_GATE = -10.0
OFFSET = -0.691
DEFAULT_TARGET_LUFS = -12.0


class ClippingWarning(UserWarning):
    """Gain pushed samples outside [-1, 1]; they were hard-clipped."""


def k_weighting(sample_rate: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """The two K-weighting biquads, designed for an arbitrary sample rate.

    Pole/zero placement follows the analog prototypes of the 48 kHz reference
    coefficients so other rates need no table lookup.
    """
    # high-shelf stage
    f0 = 1681.9744509555319
    gain_db = 3.99984385397
    q = 0.7071752369554193
    k = math.tan(math.pi * f0 / sample_rate)
    vh = 10.0 ** (gain_db / 20.0)
    vb = vh ** 0.4996667741545416
    a0 = 1.0 + k / q + k * k
    shelf_b = np.array([(vh + vb * k / q + k * k) / a0, 2.0 * (k * k - vh) / a0,
                        (vh - vb * k / q + k * k) / a0])
    shelf_a = np.array([1.0, 2.0 * (k * k - 1.0) / a0, (1.0 - k / q + k * k) / a0])
    # high-pass stage
    f0 = 38.13547087613982
    q = 0.5003270373253953
    k = math.tan(math.pi * f0 / sample_rate)
    a0 = 1.0 + k / q + k * k
    hp_b = np.array([1.0, -2.0, 1.0])
    hp_a = np.array([1.0, 2.0 * (k * k - 1.0) / a0, (1.0 - k / q + k * k) / a0])
    return [(shelf_b, shelf_a), (hp_b, hp_a)]


def block_powers(w: Waveform) -> np.ndarray:
    """Mean-square power of each 400 ms, 75 %-overlapped K-weighted block."""
    y = w.samples
    for b, a in k_weighting(w.sample_rate):
        y = lfilter(b, a, y)
    size = int(round(BLOCK_S * w.sample_rate))
    step = int(round(BLOCK_S * (1.0 - OVERLAP) * w.sample_rate))
    if y.size < size:
        raise ValueError(f"need at least {BLOCK_S} s of audio for integrated loudness")
    count = (y.size - size) // step + 1
    csum = np.concatenate([[0.0], np.cumsum(y * y)])
    starts = np.arange(count) * step
    return (csum[starts + size] - csum[starts]) / size


def measure_lufs(w: Waveform) -> float:
    """Gated integrated loudness in LUFS; ``-inf`` when every block is gated out."""
    z = block_powers(w)
    with np.errstate(divide="ignore"):
        levels = OFFSET + 10.0 * np.log10(z)
    kept = levels > ABSOLUTE_GATE
    if not kept.any():
        return float("-inf")
    relative = OFFSET + 10.0 * math.log10(z[kept].mean()) + RELATIVE_GATE
    kept &= levels > relative
    return OFFSET + 10.0 * math.log10(z[kept].mean())


def loudness_gain(w: Waveform, target: float = DEFAULT_TARGET_LUFS) -> float:
    """Linear gain that moves ``w`` to ``target`` LUFS."""
    current = measure_lufs(w)
    if not math.isfinite(current):
        raise SilentSignalError("cannot loudness-normalize a silent signal")
    return 10.0 ** ((target - current) / 20.0)


def normalize_lufs(w: Waveform, target: float = DEFAULT_TARGET_LUFS) -> Waveform:
    """Scale ``w`` by one gain so it measures ``target`` LUFS.

    Samples are hard-clipped to [-1, 1] after scaling; a :class:`ClippingWarning`
    is emitted when that changes anything.
    """
    y = w.samples * loudness_gain(w, target)
    if np.abs(y).max() > 1.0:
        warnings.warn(f"normalizing to {target} LUFS clipped the signal", ClippingWarning,
                      stacklevel=2)
        y = np.clip(y, -1.0, 1.0)
    return Waveform(y, w.sample_rate)
