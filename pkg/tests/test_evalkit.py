from __future__ import annotations

import csv
import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from conftest import SR, sine
from timbre.corpus.audio import Waveform
from timbre.evalkit.inference import (aggregate_logits, clip_logits, clip_split, embed_entries,
                                      export_embeddings, score_entries)
from timbre.evalkit.metrics import ScoreMatrix, sweep_threshold
from timbre.evalkit.reports import canonical_json, evaluate, read_scores, write_report, write_scores
from timbre.model.checkpoint import snapshot
from timbre.model.network import EncoderConfig, LDEConfig, ModelConfig, build_model
from timbre.model.sinc import SincFrontendConfig

TINY = ModelConfig(frontend=SincFrontendConfig(n_filters=8, kernel_len=101, stride=10),
                   encoder=EncoderConfig((1, 1, 1, 1), (4, 4, 8, 8)), lde=LDEConfig(3)
                   ).with_head("sigmoid_bce", 3)


@pytest.mark.parametrize("dur,count", [(5.0, 9), (1.0, 1), (0.4, 1), (3.0, 5), (1.7, 2)])
def test_clip_counts(dur, count):
    clips = clip_split(sine(440.0, dur), 1.0, 0.5)
    assert len(clips) == count
    assert all(len(c) == SR for c in clips)


def test_short_clip_is_zero_padded():
    (clip,) = clip_split(sine(440.0, 0.4))
    assert np.all(clip.samples[int(0.4 * SR):] == 0)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 6 * SR), win=st.sampled_from([0.5, 1.0, 2.0]), ov=st.sampled_from([0.0, 0.25, 0.5, 0.75]))
def test_clip_count_formula(n, win, ov):
    w = Waveform(np.ones(n), SR)
    length = n / SR
    hop = win * (1 - ov)
    expected = int(np.floor((length - win) / hop + 1e-9)) + 1 if length >= win else 1
    assert len(clip_split(w, win, ov)) == expected


def test_clip_split_validation():
    with pytest.raises(ValueError):
        clip_split(sine(1.0), 0.0)
    with pytest.raises(ValueError):
        clip_split(sine(1.0), 1.0, 1.0)


def test_aggregate_logits():
    np.testing.assert_array_equal(aggregate_logits([np.array([1.0, -2.0])]), [1.0, -2.0])
    mean = aggregate_logits([np.array([2.0]), np.array([-2.0])])
    assert mean[0] == 0.0 and expit(mean[0]) == 0.5
    clips = [np.random.default_rng(k).normal(size=3) for k in range(5)]
    np.testing.assert_allclose(aggregate_logits(clips), aggregate_logits(clips[::-1]), atol=1e-15)
    with pytest.raises(ValueError):
        aggregate_logits([])


def test_clip_logits_average_clipwise_forward():
    model = build_model(TINY, seed=0).eval()
    w = Waveform(np.random.default_rng(0).uniform(-0.5, 0.5, int(2.5 * SR)), SR)
    got = clip_logits(model, [w])[0]
    with torch.no_grad():
        per_clip = model(torch.tensor(np.stack([c.samples for c in clip_split(w)]), dtype=torch.float32))
    np.testing.assert_allclose(got, per_clip.double().numpy().mean(0), atol=1e-6)


def test_score_entries_and_embeddings(tiny_corpus, tmp_path):
    root, labels, entries = tiny_corpus
    model = build_model(TINY, seed=1)
    sm = score_entries(model, entries, root, labels.coarse_names)
    assert sm.scores.shape == (len(entries), 3)
    assert np.all((sm.scores > 0) & (sm.scores < 1))
    assert np.array_equal(sm.truth.argmax(1), [e.coarse_labels[0] for e in entries])
    emb = embed_entries(model, entries, root)
    assert emb.shape == (len(entries), TINY.embedding_dim)
    np.testing.assert_allclose(np.linalg.norm(emb, axis=1), 1.0, atol=1e-5)
    ck = snapshot(model)
    a = export_embeddings(ck, entries, root, tmp_path / "a.tsv", labels.coarse_names)
    export_embeddings(ck, entries, root, tmp_path / "b.tsv", labels.coarse_names)
    assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()
    rows = list(csv.reader(open(tmp_path / "a.tsv"), delimiter="\t"))
    assert rows[0][:3] == ["id", "labels", "e0"] and len(rows) == len(entries) + 1
    assert rows[1][1] == labels.coarse_names[entries[0].coarse_labels[0]]
    np.testing.assert_allclose(np.array(rows[1][2:], float), a[0], rtol=1e-7)


def test_scores_roundtrip(tmp_path):
    sm = ScoreMatrix(np.array([[0.1, 0.9], [0.5, 0.25]]), np.array([[0, 1], [1, 1]]), ("a", "b"))
    write_scores(tmp_path / "s.jsonl", ["x", "y"], sm)
    ids, back = read_scores(tmp_path / "s.jsonl", ("a", "b"))
    assert ids == ["x", "y"]
    np.testing.assert_array_equal(back.scores, sm.scores)
    np.testing.assert_array_equal(back.truth, sm.truth)


def _example(seed=0, n=20, m=3):
    rng = np.random.default_rng(seed)
    truth = rng.integers(0, 2, (n, m))
    truth[np.arange(n), rng.integers(m, size=n)] = 1
    return ScoreMatrix(np.clip(truth * 0.5 + rng.random((n, m)) * 0.5, 0, 1), truth, ("a", "b", "c"))


def test_evaluate_report_keys_and_rerun(tmp_path):
    report = evaluate(_example())
    assert {"micro_f1", "macro_f1", "lrap", "threshold_source", "best_micro", "best_macro",
            "at_0.5"} <= set(report)
    assert report["threshold_source"] == "test"
    assert "confusion" not in report
    assert report["micro_f1"] >= report["at_0.5"]["micro"]["f1"]
    j1, c1 = write_report(tmp_path / "a", report)
    j2, c2 = write_report(tmp_path / "b", evaluate(_example()))
    assert j1.read_bytes() == j2.read_bytes() and c1.read_bytes() == c2.read_bytes()
    assert json.loads(j1.read_text()) == json.loads(canonical_json(report))
    rows = list(csv.reader(open(c1)))
    assert rows[0] == ["label", "support", "tp", "fp", "fn", "precision", "recall", "f1"] and len(rows) == 4


def test_evaluate_val_threshold_source():
    val, test = _example(1), _example(2)
    report = evaluate(test, val=val, threshold_source="val")
    assert report["threshold_source"] == "val"
    (t_val, _), _ = sweep_threshold(val)
    assert report["best_micro"]["threshold"] == t_val
    with pytest.raises(ValueError):
        evaluate(test, threshold_source="val")
    with pytest.raises(ValueError):
        evaluate(test, threshold_source="train")


def test_evaluate_single_label_includes_confusion():
    truth = np.eye(3, dtype=int)[[0, 1, 2, 0]]
    report = evaluate(ScoreMatrix(truth * 0.8 + 0.1, truth))
    assert report["confusion"]["accuracy"] == 1.0
    assert report["confusion"]["matrix"] == [[2, 0, 0], [0, 1, 0], [0, 0, 1]]
