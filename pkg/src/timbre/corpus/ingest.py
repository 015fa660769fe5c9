"""Manifest builders for NSynth- and IRMAS-layout directory trees."""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import replace
from pathlib import Path

from timbre.corpus.audio import Waveform, load_wav, probe_duration, resample
from timbre.corpus.loudness import DEFAULT_TARGET_LUFS, measure_lufs, normalize_lufs
from timbre.corpus.manifest import LabelSpace, ManifestEntry
from timbre.errors import IngestError

logger = logging.getLogger(__name__)

TARGET_RATE = 16000
NSYNTH_VAL_FRACTION = 0.04

IRMAS_CODES = ["cel", "cla", "flu", "gac", "gel", "org", "pia", "sax", "tru", "vio", "voi"]
IRMAS_NAMES = ["cello", "clarinet", "flute", "acoustic guitar", "electric guitar", "organ",
               "piano", "saxophone", "trumpet", "violin", "voice"]


def prepare_waveform(w: Waveform, sample_rate: int = TARGET_RATE,
                     target_lufs: float | None = DEFAULT_TARGET_LUFS) -> Waveform:
    """Resample to the model rate and, when possible, loudness-normalize."""
    w = resample(w, sample_rate)
    if target_lufs is not None and len(w) >= int(0.4 * sample_rate):
        if math.isfinite(measure_lufs(w)):
            w = normalize_lufs(w, target_lufs)
    return w


def load_prepared(path: str | Path, sample_rate: int = TARGET_RATE,
                  target_lufs: float | None = DEFAULT_TARGET_LUFS) -> Waveform:
    return prepare_waveform(load_wav(path), sample_rate, target_lufs)


def irmas_labels() -> LabelSpace:
    return LabelSpace(list(IRMAS_NAMES), list(IRMAS_NAMES), list(range(len(IRMAS_NAMES))))


def _probe(path: Path, errors: list | None, entry_id: str) -> float | None:
    try:
        return probe_duration(path)
    except FileNotFoundError:
        msg = f"missing audio file {path}"
    except Exception as exc:
        msg = f"{path}: {exc}"
    logger.warning("ingest: %s", msg)
    if errors is not None:
        errors.append((entry_id, msg))
    return None


def ingest_nsynth(root_dir: str | Path, *, seed: int = 0, errors: list | None = None,
                  val_fraction: float = NSYNTH_VAL_FRACTION
                  ) -> tuple[LabelSpace, list[ManifestEntry]]:
    """Build the pre-training manifest from an NSynth-style tree.

    Every directory holding an ``examples.json`` contributes notes whose audio
    lives in ``<dir>/audio/<note_id>.wav``. Directories whose name contains
    ``test`` keep their notes in the test split; all other notes are pooled and
    ``val_fraction`` of them (rounded) is drawn at random for validation, so
    every instrument is seen in training.

    Entries with missing or unreadable audio are skipped and reported through
    ``errors``.
    """
    root = Path(root_dir)
    metas = sorted(root.glob("**/examples.json")) if root.is_dir() else []
    if not metas:
        raise IngestError(f"{root}: no examples.json metadata found")
    notes: list[tuple[str, dict, Path, bool]] = []
    for meta in metas:
        try:
            table = json.loads(meta.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise IngestError(f"{meta}: unreadable metadata ({exc})") from exc
        is_test = "test" in meta.parent.name.lower()
        for note_id in sorted(table):
            notes.append((note_id, table[note_id], meta.parent / "audio" / f"{note_id}.wav", is_test))

    instruments: dict[int, tuple[str, int]] = {}
    families: dict[int, str] = {}
    for note_id, rec, _, _ in notes:
        try:
            inst, fam = int(rec["instrument"]), int(rec["instrument_family"])
        except (KeyError, TypeError, ValueError) as exc:
            raise IngestError(f"note {note_id}: missing instrument/family fields") from exc
        inst_name = str(rec.get("instrument_str", f"instrument_{inst}"))
        fam_name = str(rec.get("instrument_family_str", f"family_{fam}"))
        if inst in instruments and instruments[inst][1] != fam:
            raise IngestError(f"instrument {inst} listed under two families")
        instruments[inst] = (inst_name, fam)
        families[fam] = fam_name

    fam_ids = sorted(families)
    fam_index = {f: i for i, f in enumerate(fam_ids)}
    inst_ids = sorted(instruments)
    inst_index = {k: i for i, k in enumerate(inst_ids)}
    labels = LabelSpace([instruments[k][0] for k in inst_ids], [families[f] for f in fam_ids],
                        [fam_index[instruments[k][1]] for k in inst_ids])

    entries = []
    for note_id, rec, path, is_test in notes:
        duration = _probe(path, errors, note_id)
        if duration is None:
            continue
        fine = inst_index[int(rec["instrument"])]
        entries.append(ManifestEntry(
            id=note_id, path=str(path.relative_to(root)), fine_label=fine,
            coarse_labels=(labels.fine_to_coarse[fine],), group_id=labels.fine_names[fine],
            split="test" if is_test else "train", duration_s=duration))

    pool = [i for i, e in enumerate(entries) if e.split == "train"]
    n_val = int(round(val_fraction * len(pool)))
    for i in random.Random(seed).sample(pool, n_val):
        entries[i] = replace(entries[i], split="val")
    return labels, entries


def _irmas_class(code: str, where: Path) -> int:
    code = code.strip().lower()
    if code not in IRMAS_CODES:
        raise IngestError(f"{where}: unknown IRMAS class code {code!r}")
    return IRMAS_CODES.index(code)


def irmas_song_key(stem: str) -> str:
    """Source-song key of an IRMAS training excerpt name.

    Training excerpts are named ``<tags><song number>__<excerpt>``; excerpts of
    one song differ only after the final double underscore.
    """
    return stem.rsplit("__", 1)[0] if "__" in stem else stem


def ingest_irmas(root_dir: str | Path, mode: str = "train", *,
                 errors: list | None = None) -> list[ManifestEntry]:
    """Build a fine-tuning (``train``) or evaluation (``test``) IRMAS manifest.

    Train mode expects one folder per class code holding single-label excerpts.
    Test mode expects ``*.wav`` files with sibling ``*.txt`` label files listing
    one class code per line.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise IngestError(f"{root}: not a directory")
    entries = []
    if mode == "train":
        folders = sorted(p for p in root.iterdir() if p.is_dir())
        if not folders:
            raise IngestError(f"{root}: no class folders")
        for folder in folders:
            for wav in sorted(folder.glob("*.wav")):
                cls = _irmas_class(folder.name, wav)
                rel = str(wav.relative_to(root))
                duration = _probe(wav, errors, rel)
                if duration is None:
                    continue
                entries.append(ManifestEntry(
                    id=rel, path=rel, fine_label=cls, coarse_labels=(cls,),
                    group_id=f"{folder.name}/{irmas_song_key(wav.stem)}", split="train",
                    duration_s=duration))
    elif mode == "test":
        for wav in sorted(root.rglob("*.wav")):
            txt = wav.with_suffix(".txt")
            if not txt.exists():
                raise IngestError(f"{wav}: missing label file {txt.name}")
            codes = [ln for ln in txt.read_text(encoding="utf-8").splitlines() if ln.strip()]
            if not codes:
                raise IngestError(f"{txt}: empty label file")
            classes = tuple(sorted({_irmas_class(c, txt) for c in codes}))
            rel = str(wav.relative_to(root))
            duration = _probe(wav, errors, rel)
            if duration is None:
                continue
            entries.append(ManifestEntry(
                id=rel, path=rel, fine_label=None, coarse_labels=classes,
                group_id=wav.stem, split="test", duration_s=duration))
        if not entries:
            raise IngestError(f"{root}: no test excerpts found")
    else:
        raise ValueError(f"mode must be 'train' or 'test', got {mode!r}")
    return entries
