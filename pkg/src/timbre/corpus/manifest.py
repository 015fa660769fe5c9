"""Manifest entries, label spaces, JSON Lines I/O, filtering and splitting."""

from __future__ import annotations

import json
import logging
import os
import random
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from timbre.corpus.audio import Waveform, first_second, load_wav, rms

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
DEFAULT_ENERGY_THRESHOLD = 1e-4


@dataclass(frozen=True)
class LabelSpace:
    """Fine (pre-training) classes and the coarse families they roll up into."""

    fine_names: list[str]
    coarse_names: list[str]
    fine_to_coarse: list[int]

    def __post_init__(self) -> None:
        if len(self.fine_to_coarse) != len(self.fine_names):
            raise ValueError("fine_to_coarse must map every fine label")
        for c in self.fine_to_coarse:
            if not 0 <= c < len(self.coarse_names):
                raise ValueError(f"coarse id {c} out of range")

    @property
    def n_fine(self) -> int:
        return len(self.fine_names)

    @property
    def n_coarse(self) -> int:
        return len(self.coarse_names)

    def to_json(self) -> str:
        return json.dumps({"fine_names": self.fine_names, "coarse_names": self.coarse_names,
                           "fine_to_coarse": self.fine_to_coarse}, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "LabelSpace":
        return cls(list(d["fine_names"]), list(d["coarse_names"]),
                   [int(c) for c in d["fine_to_coarse"]])

    def save(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "LabelSpace":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class ManifestEntry:
    """One audio item.

    ``fine_label`` is ``None`` for items with no pre-training class (polyphonic
    mixtures, IRMAS test excerpts).
    """

    id: str
    path: str
    fine_label: int | None
    coarse_labels: tuple[int, ...]
    group_id: str
    split: str = "train"
    duration_s: float = 0.0

    def __post_init__(self) -> None:
        labels = tuple(sorted({int(c) for c in self.coarse_labels}))
        if not labels:
            raise ValueError(f"{self.id}: coarse_labels must be non-empty")
        if not self.group_id:
            raise ValueError(f"{self.id}: group_id must be non-empty")
        if self.split not in SPLITS:
            raise ValueError(f"{self.id}: unknown split {self.split!r}")
        object.__setattr__(self, "coarse_labels", labels)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["coarse_labels"] = list(self.coarse_labels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestEntry":
        return cls(id=str(d["id"]), path=str(d["path"]),
                   fine_label=None if d.get("fine_label") is None else int(d["fine_label"]),
                   coarse_labels=tuple(d["coarse_labels"]), group_id=str(d["group_id"]),
                   split=d.get("split", "train"), duration_s=float(d.get("duration_s", 0.0)))


def check_consistent(entries: Iterable[ManifestEntry], labels: LabelSpace) -> None:
    """Raise if a fine label disagrees with the label space's family mapping."""
    for e in entries:
        if e.fine_label is None:
            continue
        if not 0 <= e.fine_label < labels.n_fine:
            raise ValueError(f"{e.id}: fine label {e.fine_label} out of range")
        if e.coarse_labels != (labels.fine_to_coarse[e.fine_label],):
            raise ValueError(f"{e.id}: coarse labels disagree with fine label")


def write_manifest(path: str | Path, entries: Sequence[ManifestEntry]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(ManifestEntry.from_dict(json.loads(line)))
    return out


def resolve_path(entry: ManifestEntry, root: str | Path | None) -> Path:
    p = Path(entry.path)
    return p if p.is_absolute() or root is None else Path(root) / p


def num_workers() -> int:
    """Pipeline parallelism cap from ``TIMBRE_NUM_WORKERS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("TIMBRE_NUM_WORKERS", "1")))
    except ValueError:
        return 1


def energy_filter(entries: Sequence[ManifestEntry], threshold_rms: float = DEFAULT_ENERGY_THRESHOLD,
                  *, root: str | Path | None = None,
                  loader: Callable[[ManifestEntry], Waveform] | None = None,
                  errors: list | None = None) -> list[ManifestEntry]:
    """Keep entries whose first-second RMS reaches ``threshold_rms``.

    Unreadable entries are skipped and appended to ``errors`` as
    ``(entry_id, message)`` pairs instead of aborting the pass.
    """
    if loader is None:
        def loader(e: ManifestEntry) -> Waveform:
            return load_wav(resolve_path(e, root))

    def measure(e: ManifestEntry) -> float | Exception:
        try:
            return rms(first_second(loader(e)).samples)
        except Exception as exc:  # collected per entry
            return exc

    with ThreadPoolExecutor(num_workers()) as pool:
        levels = list(pool.map(measure, entries))
    kept = []
    for e, level in zip(entries, levels):
        if isinstance(level, Exception):
            if errors is not None:
                errors.append((e.id, str(level)))
            logger.warning("energy_filter: skipping %s (%s)", e.id, level)
        elif level >= threshold_rms:
            kept.append(e)
    return kept


def make_splits(entries: Sequence[ManifestEntry], val_fraction: float, *, seed: int = 0,
                group_key: Callable[[ManifestEntry], str] = lambda e: e.group_id
                ) -> list[ManifestEntry]:
    """Assign ``train``/``val`` per group so no group straddles two splits.

    Groups are visited in a seeded random order and added to validation while
    that moves the validation entry count closer to ``val_fraction`` of the
    total. Entries already marked ``test`` are left untouched.
    """
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    groups: OrderedDict[str, list[int]] = OrderedDict()
    for i, e in enumerate(entries):
        if e.split == "test":
            continue
        key = group_key(e)
        if not key:
            raise ValueError(f"{e.id}: empty group key")
        groups.setdefault(key, []).append(i)
    total = sum(len(v) for v in groups.values())
    order = sorted(groups)
    random.Random(seed).shuffle(order)
    target = val_fraction * total
    val_groups: set[str] = set()
    count = 0
    if len(order) < 2:
        logger.warning("make_splits: only %d group(s); everything stays in train", len(order))
    else:
        for g in order:
            size = len(groups[g])
            if len(val_groups) == len(order) - 1:
                break
            if abs(count + size - target) < abs(count - target):
                val_groups.add(g)
                count += size
    out = list(entries)
    for g, idx in groups.items():
        split = "val" if g in val_groups else "train"
        for i in idx:
            out[i] = replace(out[i], split=split)
    return out


def subsample_groups(entries: Sequence[ManifestEntry], fraction: float, *, seed: int = 0
                     ) -> list[ManifestEntry]:
    """Keep a seeded ``fraction`` of groups (at least one), preserving entry order."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    groups = sorted({e.group_id for e in entries})
    keep_n = max(1, int(round(fraction * len(groups))))
    rng = random.Random(seed)
    keep = set(rng.sample(groups, keep_n))
    return [e for e in entries if e.group_id in keep]


@dataclass
class Corpus:
    """A label space plus entries, optionally rooted at a directory for relative paths."""

    labels: LabelSpace
    entries: list[ManifestEntry]
    root: Path | None = None
    errors: list = field(default_factory=list)

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]
