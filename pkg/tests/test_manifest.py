from __future__ import annotations

import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SR, sine
from timbre.corpus.audio import Waveform, first_second, load_wav, rms, write_wav
from timbre.corpus.manifest import (LabelSpace, ManifestEntry, check_consistent, energy_filter,
                                    make_splits, read_manifest, resolve_path, subsample_groups,
                                    write_manifest)


def entry(i, group="g", split="train", fine=0, coarse=(0,), path=None):
    return ManifestEntry(id=f"e{i}", path=path or f"e{i}.wav", fine_label=fine,
                         coarse_labels=coarse, group_id=group, split=split, duration_s=1.0)


def test_entry_invariants():
    with pytest.raises(ValueError):
        ManifestEntry("a", "a.wav", 0, (), "g")
    with pytest.raises(ValueError):
        ManifestEntry("a", "a.wav", 0, (1,), "")
    with pytest.raises(ValueError):
        ManifestEntry("a", "a.wav", 0, (1,), "g", split="dev")
    assert ManifestEntry("a", "a.wav", None, (3, 1, 3), "g").coarse_labels == (1, 3)


def test_label_space_roundtrip(tmp_path):
    ls = LabelSpace(["a", "b", "c"], ["x", "y"], [0, 1, 1])
    ls.save(tmp_path / "l.json")
    assert LabelSpace.load(tmp_path / "l.json") == ls
    with pytest.raises(ValueError):
        LabelSpace(["a"], ["x"], [2])


def test_check_consistent_rejects_wrong_family():
    ls = LabelSpace(["a", "b"], ["x", "y"], [0, 1])
    check_consistent([entry(0, fine=1, coarse=(1,))], ls)
    with pytest.raises(ValueError):
        check_consistent([entry(0, fine=1, coarse=(0,))], ls)


def test_manifest_roundtrip(tmp_path):
    entries = [entry(i, group=f"g{i % 3}", fine=None if i % 2 else 1, coarse=(i % 4, 2)) for i in range(6)]
    write_manifest(tmp_path / "m.jsonl", entries)
    assert read_manifest(tmp_path / "m.jsonl") == entries


def _write(tmp_path, name, x):
    write_wav(tmp_path / name, Waveform(x, SR))
    return name


def test_energy_filter_keeps_loud_drops_silent_and_collects_errors(tmp_path):
    entries = [
        entry(0, path=_write(tmp_path, "zero.wav", np.zeros(SR))),
        entry(1, path=_write(tmp_path, "sine.wav", sine(440.0, 1.0, amp=1.0 - 2 ** -15).samples)),
        entry(2, path="missing.wav"),
        entry(3, path=_write(tmp_path, "late.wav", np.r_[np.zeros(SR), 0.5 * np.ones(SR)])),
    ]
    errors = []
    kept = energy_filter(entries, 1e-4, root=tmp_path, errors=errors)
    assert [e.id for e in kept] == ["e1"]
    assert [e for e, _ in errors] == ["e2"]


def test_energy_filter_matches_recount(tiny_corpus):
    root, _, entries = tiny_corpus
    threshold = 0.05
    kept = energy_filter(entries, threshold, root=root)
    recount = [e for e in entries if rms(first_second(load_wav(resolve_path(e, root))).samples) >= threshold]
    assert kept == recount
    assert 0 < len(kept) <= len(entries)


def test_single_group_stays_in_train(caplog):
    with caplog.at_level(logging.WARNING):
        out = make_splits([entry(i) for i in range(5)], 0.2)
    assert {e.split for e in out} == {"train"}
    assert "only 1 group" in caplog.text


def test_twenty_groups_fifteen_percent():
    entries = [entry(i, group=f"g{i:02d}") for i in range(20)]
    out = make_splits(entries, 0.15, seed=3)
    assert sum(e.split == "val" for e in out) == 3


def test_split_fraction_validation():
    with pytest.raises(ValueError):
        make_splits([entry(0)], 0.0)
    with pytest.raises(ValueError):
        make_splits([entry(0)], 1.0)


def test_test_entries_untouched():
    entries = [entry(i, group=f"g{i}", split="test" if i < 3 else "train") for i in range(10)]
    out = make_splits(entries, 0.3, seed=1)
    assert all(out[i].split == "test" for i in range(3))


@settings(max_examples=40, deadline=None)
@given(sizes=st.lists(st.integers(1, 6), min_size=2, max_size=30), frac=st.floats(0.05, 0.5),
       seed=st.integers(0, 1000))
def test_splits_are_group_disjoint_and_deterministic(sizes, frac, seed):
    entries = [entry(f"{g}_{k}", group=f"g{g}") for g, n in enumerate(sizes) for k in range(n)]
    out = make_splits(entries, frac, seed=seed)
    assert out == make_splits(entries, frac, seed=seed)
    by_split = {s: {e.group_id for e in out if e.split == s} for s in ("train", "val")}
    assert not by_split["train"] & by_split["val"]
    assert [e.id for e in out] == [e.id for e in entries]


def test_split_fraction_close_with_unit_groups():
    entries = [entry(i, group=f"g{i}") for i in range(200)]
    out = make_splits(entries, 0.1, seed=0)
    assert abs(sum(e.split == "val" for e in out) / 200 - 0.1) <= 0.02


def test_subsample_groups():
    entries = [entry(f"{g}_{k}", group=f"g{g}") for g in range(20) for k in range(3)]
    sub = subsample_groups(entries, 0.1, seed=0)
    assert len({e.group_id for e in sub}) == 2 and len(sub) == 6
    assert sub == subsample_groups(entries, 0.1, seed=0)
    assert len(subsample_groups(entries, 0.01, seed=0)) == 3
