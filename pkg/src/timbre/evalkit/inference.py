"""Overlapping-clip inference and embedding extraction."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from scipy.special import expit

from timbre.corpus.audio import Waveform
from timbre.corpus.ingest import load_prepared
from timbre.corpus.manifest import ManifestEntry, resolve_path
from timbre.evalkit.metrics import ScoreMatrix
from timbre.evalkit.reports import write_embeddings
from timbre.model.checkpoint import Checkpoint, model_from_checkpoint
from timbre.model.network import InstrumentModel

INFER_BATCH = 64


def clip_split(w: Waveform, win_s: float = 1.0, overlap: float = 0.5) -> list[Waveform]:
    """Fixed-length windows with the given overlap; the partial tail is dropped.

    A signal shorter than one window gives a single zero-padded clip.
    """
    if win_s <= 0:
        raise ValueError("win_s must be positive")
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must lie in [0, 1)")
    n = int(round(win_s * w.sample_rate))
    hop = int(round(win_s * (1.0 - overlap) * w.sample_rate))
    if len(w) < n:
        padded = np.zeros(n)
        padded[: len(w)] = w.samples
        return [w.with_samples(padded)]
    count = (len(w) - n) // hop + 1
    return [w.with_samples(w.samples[k * hop: k * hop + n]) for k in range(count)]


def aggregate_logits(clip_logits: Sequence[np.ndarray]) -> np.ndarray:
    """Mean of clip logits per label (scores are the sigmoid of the result)."""
    if len(clip_logits) == 0:
        raise ValueError("need at least one clip")
    return np.mean(np.stack([np.asarray(c, dtype=np.float64) for c in clip_logits]), axis=0)


@torch.no_grad()
def _forward(model: InstrumentModel, clips: list[np.ndarray], fn) -> np.ndarray:
    out = []
    for start in range(0, len(clips), INFER_BATCH):
        x = torch.tensor(np.stack(clips[start:start + INFER_BATCH]), dtype=torch.float32)
        out.append(fn(x).double().numpy())
    return np.concatenate(out)


def clip_logits(model: InstrumentModel, waves: Sequence[Waveform], win_s: float = 1.0,
                overlap: float = 0.5) -> np.ndarray:
    """Per-item averaged logits, shape ``(len(waves), n_out)``."""
    model.eval()
    clips, owner = [], []
    for i, w in enumerate(waves):
        for c in clip_split(w, win_s, overlap):
            clips.append(c.samples)
            owner.append(i)
    logits = _forward(model, clips, model)
    owner = np.asarray(owner)
    return np.stack([aggregate_logits(logits[owner == i]) for i in range(len(waves))])


def load_items(entries: Sequence[ManifestEntry], root: str | Path | None,
               sample_rate: int) -> list[Waveform]:
    return [load_prepared(resolve_path(e, root), sample_rate) for e in entries]


def score_entries(model: InstrumentModel, entries: Sequence[ManifestEntry], root: str | Path | None,
                  label_names: Sequence[str], *, win_s: float = 1.0, overlap: float = 0.5,
                  waves: Sequence[Waveform] | None = None) -> ScoreMatrix:
    """Sigmoid scores of averaged clip logits against each entry's coarse labels."""
    if waves is None:
        waves = load_items(entries, root, model.cfg.frontend.sample_rate)
    logits = clip_logits(model, waves, win_s, overlap)
    truth = np.zeros((len(entries), len(label_names)), dtype=np.int64)
    for i, e in enumerate(entries):
        truth[i, list(e.coarse_labels)] = 1
    return ScoreMatrix(expit(logits), truth, tuple(label_names))


def embed_entries(model: InstrumentModel, entries: Sequence[ManifestEntry], root: str | Path | None
                  ) -> np.ndarray:
    """Penultimate-layer embeddings of each entry's first second."""
    model.eval()
    rate = model.cfg.frontend.sample_rate
    clips = []
    for w in load_items(entries, root, rate):
        x = np.zeros(rate)
        x[: min(rate, len(w))] = w.samples[:rate]
        clips.append(x)
    return _forward(model, clips, model.embed)


def export_embeddings(ckpt: Checkpoint, entries: Sequence[ManifestEntry], root: str | Path | None,
                      path: str | Path, label_names: Sequence[str]) -> np.ndarray:
    """Write one row per entry (id, coarse label names, embedding) and return the matrix."""
    model = model_from_checkpoint(ckpt)
    emb = embed_entries(model, entries, root)
    names = [[label_names[c] for c in e.coarse_labels] for e in entries]
    write_embeddings(path, [e.id for e in entries], names, emb)
    return emb
