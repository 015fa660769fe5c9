"""Waveform container, WAV I/O and band-limited resampling."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from timbre.errors import UnsupportedWavError, WavFormatError

KAISER_BETA = 8.6
ZERO_CROSSINGS = 64


@dataclass(frozen=True)
class Waveform:
    """Mono sample sequence at a fixed rate.

    Attributes:
        samples: float64 amplitudes, nominally in [-1, 1].
        sample_rate: rate in Hz.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 1:
            raise ValueError("waveform must be a non-empty 1-D array")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate

    def with_samples(self, samples: np.ndarray) -> "Waveform":
        return Waveform(samples, self.sample_rate)


def _read(path: str | Path, mmap: bool = False) -> tuple[int, np.ndarray]:
    try:
        return wavfile.read(path, mmap=mmap)
    except ValueError as exc:
        raise WavFormatError(f"{path}: {exc}") from exc


def probe_duration(path: str | Path) -> float:
    """Duration in seconds, memory-mapping the data chunk where the encoding allows."""
    try:
        rate, data = _read(path, mmap=True)
    except WavFormatError:
        # 24-bit containers cannot be memory-mapped.
        rate, data = _read(path)
    if rate <= 0:
        raise WavFormatError(f"{path}: invalid sample rate {rate}")
    return data.shape[0] / rate


def load_wav(path: str | Path) -> Waveform:
    """Read a WAV file and return it as a mono waveform.

    Integer PCM is scaled to [-1, 1) (24-bit data arrives left-justified in
    int32); stereo is averaged per sample.

    Raises:
        WavFormatError: the RIFF structure is broken.
        UnsupportedWavError: encoding other than PCM16/24/32 or float32, or >2 channels.
    """
    rate, data = _read(path)
    channels = 1 if data.ndim == 1 else data.shape[1]
    if channels not in (1, 2):
        raise UnsupportedWavError(f"{path}: {channels} channels")
    if data.dtype == np.int16:
        raw = data.astype(np.float64) / 2.0 ** 15
    elif data.dtype == np.int32:
        raw = data.astype(np.float64) / 2.0 ** 31
    elif data.dtype == np.float32:
        raw = data.astype(np.float64)
    else:
        raise UnsupportedWavError(f"{path}: unsupported sample type {data.dtype}")
    if raw.shape[0] < 1:
        raise WavFormatError(f"{path}: empty data chunk")
    return Waveform(raw.reshape(raw.shape[0], -1).mean(axis=1), rate)


def write_wav(path: str | Path, w: Waveform | np.ndarray, sample_rate: int | None = None,
              *, bits: int = 16) -> None:
    """Write a waveform as PCM16 or float32 (``bits=32``).

    ``w`` may be a 2-D ``(frames, channels)`` array for stereo output.
    """
    if isinstance(w, Waveform):
        samples, rate = w.samples, w.sample_rate
    else:
        samples, rate = np.asarray(w, dtype=np.float64), sample_rate
    if rate is None:
        raise ValueError("sample_rate required for raw arrays")
    if bits == 16:
        data = np.clip(np.round(samples * 2 ** 15), -2 ** 15, 2 ** 15 - 1).astype(np.int16)
    elif bits == 32:
        data = samples.astype(np.float32)
    else:
        raise UnsupportedWavError(f"cannot write {bits}-bit audio")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, int(rate), data)


_TABLE_DENSITY = 512


def _kaiser(x: np.ndarray, beta: float) -> np.ndarray:
    inside = np.abs(x) <= 1.0
    arg = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    return np.where(inside, np.i0(beta * arg) / np.i0(beta), 0.0)


def _kernel_table() -> np.ndarray:
    u = np.arange(ZERO_CROSSINGS * _TABLE_DENSITY + 2) / _TABLE_DENSITY
    return np.sinc(u) * _kaiser(u / ZERO_CROSSINGS, KAISER_BETA)


_KERNEL = _kernel_table()


def resample_ratio(x: np.ndarray, ratio: float, n_out: int | None = None,
                   *, chunk: int = 4096) -> np.ndarray:
    """Windowed-sinc interpolation of ``x`` onto a grid ``ratio`` times denser.

    Output sample ``m`` sits at source position ``m / ratio``. The low-pass cutoff
    drops to ``ratio`` times the source Nyquist when downsampling. The Kaiser-sinc
    kernel is read from a table sampled 512 times per zero crossing with linear
    interpolation.
    """
    x = np.asarray(x, dtype=np.float64)
    if n_out is None:
        n_out = int(round(x.size * ratio))
    if ratio == 1.0 and n_out == x.size:
        return x.copy()
    cutoff = min(1.0, ratio)
    half = int(np.ceil(ZERO_CROSSINGS / cutoff))
    offsets = np.arange(-half + 1, half + 1)
    out = np.empty(n_out)
    padded = np.concatenate([np.zeros(half), x, np.zeros(half + 1)])
    limit = ZERO_CROSSINGS * _TABLE_DENSITY
    for start in range(0, n_out, chunk):
        m = np.arange(start, min(start + chunk, n_out))
        t = m / ratio
        base = np.floor(t).astype(np.int64)
        idx = base[:, None] + offsets[None, :]
        pos = np.abs(t[:, None] - idx) * (cutoff * _TABLE_DENSITY)
        i0 = np.minimum(pos.astype(np.int64), limit)
        frac = pos - i0
        h = cutoff * (_KERNEL[i0] * (1.0 - frac) + _KERNEL[i0 + 1] * frac)
        h[pos >= limit] = 0.0
        taps = padded[np.clip(idx + half, 0, padded.size - 1)]
        out[m] = np.einsum("ij,ij->i", taps, h)
    return out


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Resample to ``target_rate`` with a Kaiser-windowed sinc kernel."""
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == w.sample_rate:
        return Waveform(w.samples.copy(), w.sample_rate)
    ratio = target_rate / w.sample_rate
    n_out = max(1, int(round(len(w) * ratio)))
    return Waveform(resample_ratio(w.samples, ratio, n_out), target_rate)


def first_second(w: Waveform) -> Waveform:
    """Exactly one second of audio: truncated, or zero-padded at the tail."""
    n = w.sample_rate
    out = np.zeros(n)
    k = min(n, len(w))
    out[:k] = w.samples[:k]
    return Waveform(out, w.sample_rate)


def one_second_crops(w: Waveform) -> list[Waveform]:
    """Split into consecutive non-overlapping 1 s crops; a short tail is dropped.

    Signals shorter than one second yield a single zero-padded crop.
    """
    n = w.sample_rate
    count = len(w) // n
    if count == 0:
        return [first_second(w)]
    return [Waveform(w.samples[i * n:(i + 1) * n], n) for i in range(count)]


def rms(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.mean(x * x))) if x.size else 0.0
