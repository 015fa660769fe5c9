from __future__ import annotations

import json

import numpy as np
import pytest
import torch

from timbre.corpus.audio import Waveform, write_wav
from timbre.corpus.synth import default_specs, synth_corpus

SR = 16000

torch.set_num_threads(1)


def sine(freq: float, dur: float = 1.0, sr: int = SR, amp: float = 1.0, phase: float = 0.0) -> Waveform:
    t = np.arange(int(round(dur * sr))) / sr
    return Waveform(amp * np.sin(2 * np.pi * freq * t + phase), sr)


def peak_hz(x: np.ndarray, sr: int, nfft: int = 4096) -> float:
    seg = np.asarray(x)[:nfft] * np.hanning(min(nfft, len(x)))
    spec = np.abs(np.fft.rfft(seg, nfft))
    return float(np.argmax(spec) * sr / nfft)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """3 families x 2 instruments x 3 one-second notes on disk."""
    root = tmp_path_factory.mktemp("tiny")
    specs = default_specs(3, 2, seed=0)
    labels, entries = synth_corpus(specs, 3, 1.0, 5, root)
    return root, labels, entries


@pytest.fixture()
def nsynth_tree(tmp_path):
    """12 notes, 3 instruments, 2 families in an NSynth-like layout."""
    root = tmp_path / "nsynth"
    table_train, table_valid = {}, {}
    rng = np.random.default_rng(0)
    instruments = [(7, "bass_synthetic_007", 0, "bass"), (9, "bass_electronic_009", 0, "bass"),
                   (21, "flute_acoustic_021", 2, "flute")]
    k = 0
    for inst, name, fam, fam_name in instruments:
        for j in range(4):
            note = f"{name}-0{60 + j}-100"
            rec = {"instrument": inst, "instrument_str": name, "instrument_family": fam,
                   "instrument_family_str": fam_name, "pitch": 60 + j}
            split_dir = "nsynth-train" if k % 3 else "nsynth-valid"
            (table_train if split_dir == "nsynth-train" else table_valid)[note] = rec
            write_wav(root / split_dir / "audio" / f"{note}.wav",
                      Waveform(0.3 * rng.standard_normal(SR), SR))
            k += 1
    for split_dir, table in (("nsynth-train", table_train), ("nsynth-valid", table_valid)):
        (root / split_dir).mkdir(parents=True, exist_ok=True)
        (root / split_dir / "examples.json").write_text(json.dumps(table))
    return root


@pytest.fixture()
def irmas_tree(tmp_path):
    """Train: 2 classes x 2 clips. Test: 2 excerpts with label files."""
    root = tmp_path / "irmas"
    rng = np.random.default_rng(1)
    for code in ("cel", "voi"):
        for j in range(2):
            write_wav(root / "train" / code / f"[{code}][cla]00{j}__{j + 1}.wav",
                      Waveform(0.2 * rng.standard_normal(SR * 3), SR))
    test = root / "test"
    for j, codes in enumerate(("gac\nvoi\n", "pia\n")):
        write_wav(test / f"song{j}-1.wav", Waveform(0.2 * rng.standard_normal(SR * 4), SR))
        (test / f"song{j}-1.txt").write_text(codes)
    return root
