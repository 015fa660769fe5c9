"""Synthetic stand-ins for isolated-note and polyphonic-excerpt datasets.

Families differ in partial profile, envelope and register; instruments inside a
family are small perturbations of the family archetype, so the fine/coarse
structure mirrors a note library grouped into instrument families.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from timbre.corpus.audio import Waveform, load_wav, write_wav
from timbre.corpus.loudness import DEFAULT_TARGET_LUFS, loudness_gain
from timbre.corpus.manifest import LabelSpace, ManifestEntry, resolve_path

SAMPLE_RATE = 16000
F0_LOW = 110.0
F0_HIGH = 1760.0
_FADE_S = 0.01


@dataclass(frozen=True)
class SyntheticInstrumentSpec:
    """Recipe for one synthetic instrument.

    ``decay_s`` is an exponential time constant; zero means the note sustains.
    """

    family_id: int
    harmonic_amplitudes: tuple[float, ...]
    inharmonicity: float = 0.0
    attack_s: float = 0.01
    decay_s: float = 0.0
    vibrato_rate_hz: float = 0.0
    vibrato_depth_cents: float = 0.0
    pitch_range_hz: tuple[float, float] = (F0_LOW, 2 * F0_LOW)
    name: str = ""
    family_name: str = ""

    def __post_init__(self) -> None:
        amps = tuple(float(a) for a in self.harmonic_amplitudes)
        if not amps or min(amps) < 0 or max(amps) <= 0:
            raise ValueError("harmonic_amplitudes must be non-empty, non-negative, not all zero")
        if self.attack_s < 0 or self.decay_s < 0:
            raise ValueError("attack_s and decay_s must be >= 0")
        lo, hi = self.pitch_range_hz
        if not 0 < lo <= hi:
            raise ValueError("invalid pitch range")
        object.__setattr__(self, "harmonic_amplitudes", amps)


# Partial profiles, attack, decay, inharmonicity, vibrato (rate, cents).
_ARCHETYPES = [
    ("bass", [1.0 / k for k in range(1, 13)], 0.004, 0.6, 2e-4, (0.0, 0.0)),
    ("reed", [1.0 / k if k % 2 else 0.02 for k in range(1, 16)], 0.03, 0.0, 0.0, (5.0, 8.0)),
    ("flute", [1.0, 0.25, 0.08, 0.03], 0.08, 0.0, 0.0, (4.5, 15.0)),
    ("brass", [k * math.exp(-k / 2.5) for k in range(1, 15)], 0.05, 0.0, 0.0, (5.5, 5.0)),
    ("mallet", [1.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.25], 0.002, 0.25, 5e-4, (0.0, 0.0)),
    ("string", [1.0 / k ** 0.8 for k in range(1, 20)], 0.12, 0.0, 1e-4, (6.0, 25.0)),
    ("organ", [1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], 0.01, 0.0, 0.0, (0.0, 0.0)),
    ("guitar", [1.0 / k ** 1.5 for k in range(1, 25)], 0.003, 0.9, 3e-4, (0.0, 0.0)),
]


def default_specs(n_families: int = 8, instruments_per_family: int = 8, *,
                  seed: int = 0) -> list[SyntheticInstrumentSpec]:
    """Archetype-based instrument recipes.

    Family registers are one octave wide, staggered so they jointly cover
    110-1760 Hz. Instruments jitter their family's partial gains, envelope and
    vibrato by seeded random factors.
    """
    if not 2 <= n_families <= len(_ARCHETYPES):
        raise ValueError(f"n_families must lie in [2, {len(_ARCHETYPES)}]")
    rng = np.random.default_rng(seed)
    octaves = math.log2(F0_HIGH / F0_LOW) - 1.0
    specs = []
    for fam in range(n_families):
        name, amps, attack, decay, inharm, (vr, vd) = _ARCHETYPES[fam]
        step = octaves / max(1, n_families - 1)
        lo = F0_LOW * 2.0 ** (fam * step)
        for i in range(instruments_per_family):
            jitter = np.exp(rng.normal(0.0, 0.2, len(amps)))
            specs.append(SyntheticInstrumentSpec(
                family_id=fam,
                harmonic_amplitudes=tuple(float(a) for a in np.asarray(amps) * jitter),
                inharmonicity=float(inharm * rng.uniform(0.5, 1.5)),
                attack_s=float(attack * rng.uniform(0.7, 1.3)),
                decay_s=float(decay * rng.uniform(0.7, 1.3)),
                vibrato_rate_hz=float(vr * rng.uniform(0.8, 1.2)),
                vibrato_depth_cents=float(vd * rng.uniform(0.8, 1.2)),
                pitch_range_hz=(lo, 2.0 * lo),
                name=f"{name}_{i:02d}",
                family_name=name,
            ))
    return specs


def render_note(spec: SyntheticInstrumentSpec, f0: float, duration_s: float,
                sample_rate: int = SAMPLE_RATE, *, phase_seed: int = 0) -> np.ndarray:
    """Additive synthesis of one note at fundamental ``f0``.

    Partial ``k`` sits at ``k * f0 * sqrt(1 + B k^2)``; partials at or above 0.45 of
    the sample rate are omitted. The peak is scaled to 0.5.
    """
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    if spec.vibrato_depth_cents > 0 and spec.vibrato_rate_hz > 0:
        ratio = 2.0 ** (spec.vibrato_depth_cents / 1200.0 * np.sin(2 * np.pi * spec.vibrato_rate_hz * t))
    else:
        ratio = np.ones(n)
    base_phase = 2 * np.pi * np.cumsum(f0 * ratio) / sample_rate
    phases = np.random.default_rng(phase_seed).uniform(0, 2 * np.pi, len(spec.harmonic_amplitudes))
    y = np.zeros(n)
    for k, amp in enumerate(spec.harmonic_amplitudes, start=1):
        stretch = k * math.sqrt(1.0 + spec.inharmonicity * k * k)
        if amp == 0 or stretch * f0 * 2 ** (spec.vibrato_depth_cents / 1200) >= 0.45 * sample_rate:
            continue
        y += amp * np.sin(stretch * base_phase + phases[k - 1])
    env = np.ones(n)
    if spec.attack_s > 0:
        env = np.minimum(1.0, t / spec.attack_s)
    if spec.decay_s > 0:
        env = env * np.exp(-t / spec.decay_s)
    fade = min(n, int(_FADE_S * sample_rate))
    if fade:
        env[-fade:] *= np.linspace(1.0, 0.0, fade)
    y *= env
    peak = np.abs(y).max()
    return y * (0.5 / peak) if peak > 0 else y


def _at_loudness(y: np.ndarray, sample_rate: int, target: float) -> np.ndarray:
    w = Waveform(y, sample_rate)
    return y * loudness_gain(w, target)


def synth_corpus(specs: Sequence[SyntheticInstrumentSpec], notes_per_instrument: int,
                 duration_s: float, seed: int, out_dir: str | Path, *,
                 sample_rate: int = SAMPLE_RATE, target_lufs: float = DEFAULT_TARGET_LUFS,
                 id_prefix: str = "") -> tuple[LabelSpace, list[ManifestEntry]]:
    """Render every instrument's notes to 16-bit WAV files under ``out_dir/audio``.

    Pitches are drawn log-uniformly from each instrument's register. Notes are
    normalized to ``target_lufs``. Output depends only on the arguments.
    """
    families = sorted({s.family_id for s in specs})
    if len(families) < 2:
        raise ValueError("need at least two families")
    if duration_s < 1:
        raise ValueError("duration_s must be >= 1")
    fam_index = {f: i for i, f in enumerate(families)}
    fam_names = {}
    for s in specs:
        fam_names.setdefault(s.family_id, s.family_name or f"family{s.family_id}")
    labels = LabelSpace([s.name or f"instrument{i:03d}" for i, s in enumerate(specs)],
                        [fam_names[f] for f in families],
                        [fam_index[s.family_id] for s in specs])
    out = Path(out_dir)
    children = np.random.SeedSequence(seed).spawn(len(specs))
    entries = []
    for i, (spec, child) in enumerate(zip(specs, children)):
        rng = np.random.default_rng(child)
        lo, hi = spec.pitch_range_hz
        for j in range(notes_per_instrument):
            f0 = float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
            y = render_note(spec, f0, duration_s, sample_rate, phase_seed=int(rng.integers(2 ** 31)))
            y = np.clip(_at_loudness(y, sample_rate, target_lufs), -1.0, 1.0)
            note_id = f"{id_prefix}i{i:03d}_n{j:03d}"
            rel = f"audio/{note_id}.wav"
            write_wav(out / rel, Waveform(y, sample_rate))
            entries.append(ManifestEntry(
                id=note_id, path=rel, fine_label=i, coarse_labels=(labels.fine_to_coarse[i],),
                group_id=labels.fine_names[i], split="train", duration_s=duration_s))
    return labels, entries


def make_polyphonic(entries: Sequence[ManifestEntry], n_mixtures: int, seed: int,
                    out_dir: str | Path, *, k_range: tuple[int, int] = (1, 3),
                    k_weights: Sequence[float] | None = None, root: str | Path | None = None,
                    duration_s: float | None = None, target_lufs: float = DEFAULT_TARGET_LUFS,
                    id_prefix: str = "mix") -> list[ManifestEntry]:
    """Sum loudness-matched notes of ``k`` distinct families into mixtures.

    ``k`` is drawn from ``k_range`` (inclusive) with ``k_weights`` (uniform by
    default). Sources are brought to ``target_lufs`` before summing; a mixture
    whose peak would exceed full scale is scaled down as a whole.
    """
    k_lo, k_hi = k_range
    if not 1 <= k_lo <= k_hi:
        raise ValueError(f"invalid k_range {k_range}")
    by_family: dict[int, list[ManifestEntry]] = {}
    for e in entries:
        by_family.setdefault(e.coarse_labels[0], []).append(e)
    fams = sorted(by_family)
    if len(fams) < k_hi:
        raise ValueError(f"need {k_hi} families, entries span only {len(fams)}")
    ks = np.arange(k_lo, k_hi + 1)
    p = None if k_weights is None else np.asarray(k_weights, float) / np.sum(k_weights)
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    cache: dict[str, Waveform] = {}
    mixtures = []
    for m in range(n_mixtures):
        k = int(rng.choice(ks, p=p))
        chosen = sorted(int(f) for f in rng.choice(fams, size=k, replace=False))
        sources = [by_family[f][int(rng.integers(len(by_family[f])))] for f in chosen]
        waves = []
        for src in sources:
            if src.id not in cache:
                cache[src.id] = load_wav(resolve_path(src, root))
            waves.append(cache[src.id])
        rate = waves[0].sample_rate
        n = int(round(duration_s * rate)) if duration_s else min(len(w) for w in waves)
        mix = np.zeros(n)
        for w in waves:
            seg = w.samples[:n]
            mix[: seg.size] += _at_loudness(seg, rate, target_lufs)
        peak = np.abs(mix).max()
        if peak > 0.99:
            mix *= 0.99 / peak
        mix_id = f"{id_prefix}{m:05d}"
        rel = f"audio/{mix_id}.wav"
        write_wav(out / rel, Waveform(mix, rate))
        mixtures.append(ManifestEntry(
            id=mix_id, path=rel, fine_label=None,
            coarse_labels=tuple(sorted({c for s in sources for c in s.coarse_labels})),
            group_id=mix_id, split="train", duration_s=n / rate))
    return mixtures
