"""On-the-fly pre-training augmentations.

Same-instrument concatenation, loudness-matched mixup with a Beta-distributed
ratio, and a randomized chain of production-style effects. Every function takes
an explicit ``numpy.random.Generator`` where randomness is involved.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.signal import lfilter

from timbre.corpus.audio import Waveform, resample_ratio
from timbre.corpus.loudness import DEFAULT_TARGET_LUFS, loudness_gain
from timbre.errors import ConfigError, SilentSignalError

EFFECT_ORDER = ("pitch_shift", "filter", "delay", "reverb", "gain", "noise")

TRIM_FRAME_S = 0.02
TRIM_RMS = 1e-3
CROSSFADE_S = 0.01

COMB_DELAYS_MS = (29.7, 37.1, 41.1, 43.7)
ALLPASS_DELAYS_MS = (5.0, 1.7)
ALLPASS_GAIN = 0.7
REVERB_WET = 0.3
REVERB_DRY = 0.7


@dataclass(frozen=True)
class MixRatio:
    lam: float
    alpha: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


@dataclass(frozen=True)
class EffectConfig:
    """Probability of running the chain and the sampling range of each effect."""

    chain_probability: float = 0.3
    toggle_probability: float = 0.5
    noise_snr_db: tuple[float, float] = (20.0, 40.0)
    delay_ms: tuple[float, float] = (50.0, 300.0)
    delay_attenuation: tuple[float, float] = (0.3, 0.7)
    reverb_decay: tuple[float, float] = (0.3, 0.8)
    gain_db: tuple[float, float] = (-6.0, 6.0)
    pitch_semitones: tuple[float, float] = (-2.0, 2.0)
    highpass_hz: tuple[float, float] = (30.0, 400.0)
    lowpass_hz: tuple[float, float] = (2000.0, 7500.0)

    def validate(self, sample_rate: int = 16000) -> None:
        for name in ("chain_probability", "toggle_probability"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        ranges = {k: v for k, v in asdict(self).items() if isinstance(v, (tuple, list))}
        for name, (lo, hi) in ranges.items():
            if lo > hi:
                raise ConfigError(f"{name}: empty range ({lo}, {hi})")
        nyquist = sample_rate / 2
        if not (0 < self.highpass_hz[0] and self.highpass_hz[1] < nyquist):
            raise ConfigError("highpass cutoffs must lie in (0, Nyquist)")
        if not (0 < self.lowpass_hz[0] and self.lowpass_hz[1] < nyquist):
            raise ConfigError("lowpass cutoffs must lie in (0, Nyquist)")
        if not (0 < self.reverb_decay[0] and self.reverb_decay[1] < 1):
            raise ConfigError("reverb decay must lie in (0, 1)")
        if not (-12 <= self.pitch_semitones[0] and self.pitch_semitones[1] <= 12):
            raise ConfigError("pitch shift limited to +/-12 semitones")
        if not (0 <= self.delay_attenuation[0] and self.delay_attenuation[1] < 1):
            raise ConfigError("delay attenuation must lie in [0, 1)")
        if self.delay_ms[0] < 0:
            raise ConfigError("delay must be non-negative")

    @classmethod
    def from_dict(cls, d: Mapping) -> "EffectConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown effect keys: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


# -- concatenation -----------------------------------------------------------

def trim_silence(w: Waveform, frame_s: float = TRIM_FRAME_S, threshold: float = TRIM_RMS) -> Waveform:
    """Drop leading and trailing frames whose RMS is below ``threshold``."""
    n = max(1, int(round(frame_s * w.sample_rate)))
    x = w.samples
    count = int(math.ceil(x.size / n))
    padded = np.zeros(count * n)
    padded[: x.size] = x
    levels = np.sqrt(np.mean(padded.reshape(count, n) ** 2, axis=1))
    loud = np.flatnonzero(levels >= threshold)
    if loud.size == 0:
        return w
    return Waveform(x[loud[0] * n: min(x.size, (loud[-1] + 1) * n)], w.sample_rate)


def concat_same_class(parts: Sequence[Waveform], target_len_s: float = 1.0) -> Waveform:
    """Trim each part, join them with 10 ms linear crossfades, crop/pad to length."""
    if not parts:
        raise ValueError("concat_same_class needs at least one part")
    rate = parts[0].sample_rate
    if any(p.sample_rate != rate for p in parts):
        raise ValueError("parts must share a sample rate")
    fade = int(round(CROSSFADE_S * rate))
    out = trim_silence(parts[0]).samples
    for p in parts[1:]:
        nxt = trim_silence(p).samples
        k = min(fade, out.size, nxt.size)
        if k > 0:
            ramp = np.linspace(0.0, 1.0, k + 2)[1:-1]
            blend = out[-k:] * (1.0 - ramp) + nxt[:k] * ramp
            out = np.concatenate([out[:-k], blend, nxt[k:]])
        else:
            out = np.concatenate([out, nxt])
    n = int(round(target_len_s * rate))
    result = np.zeros(n)
    result[: min(n, out.size)] = out[:n]
    return Waveform(result, rate)


# -- mixup ---------------------------------------------------------------------

def sample_lambda(alpha: float, rng: np.random.Generator) -> MixRatio:
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return MixRatio(float(rng.beta(alpha, alpha)), alpha)


def mixup(x_i: Waveform, y_i: np.ndarray, x_j: Waveform, y_j: np.ndarray,
          lam: float | MixRatio) -> tuple[Waveform, np.ndarray]:
    """Convex combination of two examples and their label vectors."""
    lam = lam.lam if isinstance(lam, MixRatio) else float(lam)
    if len(x_i) != len(x_j) or x_i.sample_rate != x_j.sample_rate:
        raise ValueError("mixup inputs must share length and sample rate")
    y_i = np.asarray(y_i, dtype=np.float64)
    y_j = np.asarray(y_j, dtype=np.float64)
    if y_i.shape != y_j.shape:
        raise ValueError("label vectors differ in shape")
    x = lam * x_i.samples + (1.0 - lam) * x_j.samples
    return Waveform(x, x_i.sample_rate), lam * y_i + (1.0 - lam) * y_j


def loudness_match(w: Waveform, target: float = DEFAULT_TARGET_LUFS) -> Waveform:
    """Bring ``w`` to ``target`` LUFS; silent or too-short input is returned as is."""
    if len(w) < int(0.4 * w.sample_rate):
        return w
    try:
        return Waveform(w.samples * loudness_gain(w, target), w.sample_rate)
    except SilentSignalError:
        return w


# -- effects -------------------------------------------------------------------

def pitch_shift(w: Waveform, semitones: float) -> Waveform:
    """Shift pitch by resampling; duration is restored by cropping or zero-padding."""
    if abs(semitones) > 12:
        raise ValueError("pitch shift limited to +/-12 semitones")
    if semitones == 0:
        return Waveform(w.samples.copy(), w.sample_rate)
    factor = 2.0 ** (semitones / 12.0)
    n_src = int(math.floor(len(w) / factor))
    y = resample_ratio(w.samples, 1.0 / factor, max(1, n_src))
    out = np.zeros(len(w))
    out[: min(len(w), y.size)] = y[: len(w)]
    return Waveform(out, w.sample_rate)


def biquad(kind: str, cutoff_hz: float, sample_rate: int, q: float = 1 / math.sqrt(2)
           ) -> tuple[np.ndarray, np.ndarray]:
    """RBJ cookbook high- or low-pass biquad, normalized so ``a[0] == 1``."""
    w0 = 2 * math.pi * cutoff_hz / sample_rate
    cw, alpha = math.cos(w0), math.sin(w0) / (2 * q)
    if kind == "lowpass":
        b = np.array([(1 - cw) / 2, 1 - cw, (1 - cw) / 2])
    elif kind == "highpass":
        b = np.array([(1 + cw) / 2, -(1 + cw), (1 + cw) / 2])
    else:
        raise ValueError(f"unknown filter kind {kind!r}")
    a = np.array([1 + alpha, -2 * cw, 1 - alpha])
    return b / a[0], a / a[0]


def band_filter(w: Waveform, highpass_hz: float | None, lowpass_hz: float | None) -> Waveform:
    y = w.samples
    if highpass_hz:
        y = lfilter(*biquad("highpass", highpass_hz, w.sample_rate), y)
    if lowpass_hz:
        y = lfilter(*biquad("lowpass", lowpass_hz, w.sample_rate), y)
    return Waveform(y, w.sample_rate)


def delay(w: Waveform, delay_ms: float, attenuation: float) -> Waveform:
    """Single attenuated echo, length preserved."""
    d = int(round(delay_ms * w.sample_rate / 1000))
    y = w.samples.copy()
    if 0 < d < len(w):
        y[d:] += attenuation * w.samples[:-d]
    return Waveform(y, w.sample_rate)


def _comb(x: np.ndarray, d: int, g: float) -> np.ndarray:
    # y[n] = g x[n-d] + g y[n-d]
    b = np.zeros(d + 1)
    b[d] = g
    a = np.zeros(d + 1)
    a[0], a[d] = 1.0, -g
    return lfilter(b, a, x)


def _allpass(x: np.ndarray, d: int, g: float) -> np.ndarray:
    b = np.zeros(d + 1)
    b[0], b[d] = -g, 1.0
    a = np.zeros(d + 1)
    a[0], a[d] = 1.0, -g
    return lfilter(b, a, x)


def reverb(w: Waveform, decay: float) -> Waveform:
    """Schroeder reverberator: four parallel combs into two series allpasses.

    ``decay`` is the comb feedback gain; it also scales the comb input, so the
    wet path vanishes as ``decay`` goes to zero. Output length equals input length.
    """
    if not 0.0 < decay < 1.0:
        raise ValueError("decay must lie in (0, 1)")
    x = w.samples
    sr = w.sample_rate
    wet = np.zeros_like(x)
    for ms in COMB_DELAYS_MS:
        wet += _comb(x, max(1, int(round(ms * sr / 1000))), decay)
    wet /= len(COMB_DELAYS_MS)
    for ms in ALLPASS_DELAYS_MS:
        wet = _allpass(wet, max(1, int(round(ms * sr / 1000))), ALLPASS_GAIN)
    return Waveform(REVERB_DRY * x + REVERB_WET * wet, sr)


def apply_gain(w: Waveform, gain_db: float) -> Waveform:
    return Waveform(w.samples * 10.0 ** (gain_db / 20.0), w.sample_rate)


def add_noise(w: Waveform, snr_db: float, rng: np.random.Generator) -> Waveform:
    """Add white Gaussian noise at ``snr_db`` relative to the signal's mean power."""
    power = float(np.mean(w.samples ** 2))
    noise = rng.standard_normal(len(w))
    if power > 0:
        noise *= math.sqrt(power / 10.0 ** (snr_db / 10.0) / np.mean(noise ** 2))
    else:
        noise *= 0.0
    return Waveform(w.samples + noise, w.sample_rate)


def _uniform(rng: np.random.Generator, bounds: Sequence[float]) -> float:
    lo, hi = bounds
    return float(rng.uniform(lo, hi)) if hi > lo else float(lo)


def _log_uniform(rng: np.random.Generator, bounds: Sequence[float]) -> float:
    lo, hi = bounds
    return float(math.exp(rng.uniform(math.log(lo), math.log(hi)))) if hi > lo else float(lo)


@dataclass
class EffectTrace:
    """Which effects ran, with their sampled parameters."""

    applied: dict[str, dict] = field(default_factory=dict)


def effect_chain(w: Waveform, cfg: EffectConfig, rng: np.random.Generator, *,
                 force: Mapping[str, bool] | None = None,
                 trace: EffectTrace | None = None) -> Waveform:
    """Randomly apply a subset of effects in a fixed order, then clip to [-1, 1].

    With probability ``cfg.chain_probability`` each effect is switched on
    independently with ``cfg.toggle_probability``; otherwise the input is returned
    unchanged. ``force`` pins individual toggles (and bypasses the chain draw when
    given); unlisted effects are then off.
    """
    if force is None:
        if rng.random() >= cfg.chain_probability:
            return w
        on = {name: bool(rng.random() < cfg.toggle_probability) for name in EFFECT_ORDER}
    else:
        unknown = set(force) - set(EFFECT_ORDER)
        if unknown:
            raise ValueError(f"unknown effects {sorted(unknown)}")
        on = {name: bool(force.get(name, False)) for name in EFFECT_ORDER}
    if not any(on.values()):
        return w
    out = w
    record = trace.applied if trace is not None else {}
    if on["pitch_shift"]:
        st = _uniform(rng, cfg.pitch_semitones)
        out = pitch_shift(out, st)
        record["pitch_shift"] = {"semitones": st}
    if on["filter"]:
        hp = _log_uniform(rng, cfg.highpass_hz)
        lp = _log_uniform(rng, cfg.lowpass_hz)
        out = band_filter(out, hp, lp)
        record["filter"] = {"highpass_hz": hp, "lowpass_hz": lp}
    if on["delay"]:
        ms = _uniform(rng, cfg.delay_ms)
        att = _uniform(rng, cfg.delay_attenuation)
        out = delay(out, ms, att)
        record["delay"] = {"delay_ms": ms, "attenuation": att}
    if on["reverb"]:
        dec = _uniform(rng, cfg.reverb_decay)
        out = reverb(out, dec)
        record["reverb"] = {"decay": dec}
    if on["gain"]:
        g = _uniform(rng, cfg.gain_db)
        out = apply_gain(out, g)
        record["gain"] = {"gain_db": g}
    if on["noise"]:
        snr = _uniform(rng, cfg.noise_snr_db)
        out = add_noise(out, snr, rng)
        record["noise"] = {"snr_db": snr}
    return Waveform(np.clip(out.samples, -1.0, 1.0), out.sample_rate)
