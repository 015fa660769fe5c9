"""Deterministic batch construction for both training phases.

Batch composition and every augmentation draw depend only on ``(seed, epoch,
batch index, position)``. Samples of a batch may be prepared on a thread pool
(``TIMBRE_NUM_WORKERS``); results are collected in order, so worker timing never
affects the output.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch

from timbre.augment import (EffectConfig, concat_same_class, effect_chain, loudness_match, mixup,
                            sample_lambda)
from timbre.corpus.audio import Waveform, first_second, one_second_crops
from timbre.corpus.ingest import TARGET_RATE, load_prepared
from timbre.corpus.manifest import ManifestEntry, num_workers, resolve_path
from timbre.errors import IngestError

logger = logging.getLogger(__name__)

_MIX_STREAM = 2 ** 32 - 1


class AudioCache:
    """Prepared (resampled, loudness-normalized) audio held in memory as float32."""

    def __init__(self, root: str | Path | None, sample_rate: int = TARGET_RATE) -> None:
        self.root = root
        self.sample_rate = sample_rate
        self._data: dict[str, np.ndarray] = {}

    def preload(self, entries: Sequence[ManifestEntry]) -> None:
        todo = [e for e in entries if e.id not in self._data]

        def load(e: ManifestEntry) -> np.ndarray:
            try:
                return load_prepared(resolve_path(e, self.root), self.sample_rate).samples.astype(np.float32)
            except (OSError, ValueError) as exc:
                raise IngestError(f"{e.id}: {exc}") from exc

        with ThreadPoolExecutor(num_workers()) as pool:
            for e, x in zip(todo, pool.map(load, todo)):
                self._data[e.id] = x

    def get(self, entry: ManifestEntry) -> Waveform:
        if entry.id not in self._data:
            self.preload([entry])
        return Waveform(self._data[entry.id].astype(np.float64), self.sample_rate)


@dataclass(frozen=True)
class Batch:
    x: torch.Tensor        # (B, samples) float32
    y: torch.Tensor        # (B, K) float32 targets (soft or multi-hot)


def _sample_rng(seed: int, epoch: int, batch: int, pos: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, batch, pos])


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch, 0xBA7C]).permutation(n)


def steps_per_epoch(n: int, batch_size: int) -> int:
    return max(1, math.ceil(n / batch_size))


@dataclass
class PretrainAugment:
    concat_prob: float
    effects: EffectConfig
    mixup_prob: float
    mixup_alpha: float


class PretrainData:
    """Monophonic notes with fine-class one-hot targets and on-the-fly augmentation.

    Per sample: first second (or, with ``concat_prob``, a same-class
    concatenation cut to one second), effect chain, loudness match. Then, per
    sample with ``mixup_prob``, a Beta-weighted mix with a random partner from
    the same batch; targets are mixed with the same ratio.
    """

    def __init__(self, entries: Sequence[ManifestEntry], n_classes: int, cache: AudioCache,
                 aug: PretrainAugment, seed: int) -> None:
        self.entries = [e for e in entries if e.fine_label is not None]
        if not self.entries:
            raise IngestError("pre-training manifest has no entries with a fine label")
        self.n_classes = n_classes
        self.cache = cache
        self.aug = aug
        self.seed = seed
        self.by_class: dict[int, list[int]] = {}
        for i, e in enumerate(self.entries):
            self.by_class.setdefault(int(e.fine_label), []).append(i)
        cache.preload(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def _one(self, idx: int, rng: np.random.Generator) -> Waveform:
        e = self.entries[idx]
        w = self.cache.get(e)
        if rng.random() < self.aug.concat_prob:
            pool = self.by_class[int(e.fine_label)]
            other = self.entries[pool[int(rng.integers(len(pool)))]]
            w = concat_same_class([w, self.cache.get(other)], 1.0)
        else:
            w = first_second(w)
        w = effect_chain(w, self.aug.effects, rng)
        return loudness_match(w)

    def batches(self, epoch: int, batch_size: int) -> Iterator[Batch]:
        order = epoch_order(len(self), self.seed, epoch)
        with ThreadPoolExecutor(num_workers()) as pool:
            for b in range(steps_per_epoch(len(self), batch_size)):
                idx = order[b * batch_size:(b + 1) * batch_size]
                rngs = [_sample_rng(self.seed, epoch, b, p) for p in range(len(idx))]
                waves = list(pool.map(self._one, idx, rngs))
                targets = [np.eye(self.n_classes)[int(self.entries[i].fine_label)] for i in idx]
                mix_rng = _sample_rng(self.seed, epoch, b, _MIX_STREAM)
                xs, ys = [], []
                for p, (w, y) in enumerate(zip(waves, targets)):
                    if len(idx) > 1 and mix_rng.random() < self.aug.mixup_prob:
                        q = int(mix_rng.integers(len(idx) - 1))
                        q += q >= p
                        lam = sample_lambda(self.aug.mixup_alpha, mix_rng)
                        w, y = mixup(w, y, waves[q], targets[q], lam)
                    xs.append(w.samples)
                    ys.append(y)
                yield Batch(torch.tensor(np.stack(xs), dtype=torch.float32),
                            torch.tensor(np.stack(ys), dtype=torch.float32))


class FinetuneData:
    """Multi-label clips split into one-second crops, no augmentation."""

    def __init__(self, entries: Sequence[ManifestEntry], n_classes: int, cache: AudioCache,
                 seed: int) -> None:
        if not entries:
            raise IngestError("fine-tuning manifest is empty")
        cache.preload(entries)
        self.crops: list[np.ndarray] = []
        self.targets: list[np.ndarray] = []
        for e in entries:
            y = np.zeros(n_classes)
            y[list(e.coarse_labels)] = 1.0
            for c in one_second_crops(cache.get(e)):
                self.crops.append(c.samples.astype(np.float32))
                self.targets.append(y)
        self.seed = seed

    def __len__(self) -> int:
        return len(self.crops)

    def batches(self, epoch: int, batch_size: int) -> Iterator[Batch]:
        order = epoch_order(len(self), self.seed, epoch)
        for b in range(steps_per_epoch(len(self), batch_size)):
            idx = order[b * batch_size:(b + 1) * batch_size]
            yield Batch(torch.from_numpy(np.stack([self.crops[i] for i in idx])),
                        torch.tensor(np.stack([self.targets[i] for i in idx]), dtype=torch.float32))
