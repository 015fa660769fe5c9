from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from oracles import f1_bruteforce, lrap_bruteforce, random_instance
from timbre.evalkit.metrics import (DEFAULT_GRID, ScoreMatrix, confusion_single, f1_scores, is_single_label,
                                    lrap, sweep_threshold)


def test_lrap_worked_example():
    sm = ScoreMatrix(np.array([[0.75, 0.5, 1.0], [1.0, 0.2, 0.1]]), np.array([[1, 0, 0], [0, 0, 1]]))
    assert lrap(sm) == pytest.approx(5 / 12, abs=1e-15)


def test_lrap_ties_and_perfect():
    assert lrap(ScoreMatrix(np.full((1, 4), 0.3), np.array([[0, 1, 0, 0]]))) == 0.25
    assert lrap(ScoreMatrix(np.array([[0.9, 0.1, 0.8]]), np.array([[1, 0, 1]]))) == 1.0


def test_lrap_row_without_positive():
    with pytest.raises(ValueError, match="row 1"):
        lrap(ScoreMatrix(np.ones((2, 2)), np.array([[1, 0], [0, 0]])))


def test_f1_single_class_view():
    rep = f1_scores(ScoreMatrix(np.ones((3, 1)), np.array([[1], [0], [1]])), 0.5)
    c = rep.per_class[0]
    assert (c.precision, c.recall) == (pytest.approx(2 / 3), 1.0)
    assert c.f1 == pytest.approx(0.8)


def test_f1_two_class_worked_example():
    # Class A: TP=2. Class B: one FP and one FN.
    truth = np.array([[1, 0], [1, 0], [0, 1], [0, 0]])
    scores = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
    rep = f1_scores(ScoreMatrix(scores, truth), 0.5)
    assert rep.macro_f1 == 0.5
    assert rep.micro_f1 == pytest.approx(2 / 3, abs=1e-15)
    assert [(c.tp, c.fp, c.fn) for c in rep.per_class] == [(2, 0, 0), (0, 1, 1)]


def test_perfect_predictions():
    truth = np.array([[1, 0, 1], [0, 1, 0]])
    rep = f1_scores(ScoreMatrix(truth * 0.9 + 0.05, truth), 0.5)
    assert rep.micro_f1 == rep.macro_f1 == 1.0


def test_random_instances_match_bruteforce():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        truth, scores = random_instance(rng)
        sm = ScoreMatrix(scores, truth)
        worst = max(worst, abs(lrap(sm) - lrap_bruteforce(truth, scores)))
        t = float(rng.choice([0.2, 0.5, rng.random()]))
        rep, ref = f1_scores(sm, t), f1_bruteforce(truth, scores, t)
        for key in ("micro_f1", "macro_f1", "micro_precision", "micro_recall", "macro_precision",
                    "macro_recall"):
            worst = max(worst, abs(getattr(rep, key) - ref[key]))
        worst = max(worst, max(abs(c.f1 - r) for c, r in zip(rep.per_class, ref["per_class_f1"])))
    assert worst <= 1e-12


def test_sweep_separated_scores():
    truth = np.array([[1, 0], [0, 1], [1, 1]])
    (tm, rm), (ta, ra) = sweep_threshold(ScoreMatrix(np.where(truth, 0.9, 0.1), truth))
    assert tm == ta == 0.11
    assert rm.micro_f1 == ra.macro_f1 == 1.0


def test_sweep_all_zero_scores():
    truth = np.array([[1, 0], [0, 1]])
    (tm, rm), _ = sweep_threshold(ScoreMatrix(np.zeros((2, 2)), truth))
    assert rm.micro_f1 == 0.0 and tm == 0.01


def test_sweep_grid_validation():
    sm = ScoreMatrix(np.zeros((1, 2)), np.array([[1, 0]]))
    with pytest.raises(ValueError):
        sweep_threshold(sm, [])
    with pytest.raises(ValueError):
        sweep_threshold(sm, [1.5])
    assert len(DEFAULT_GRID) == 99 and DEFAULT_GRID[0] == 0.01 and DEFAULT_GRID[-1] == 0.99


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 30))
def test_sweep_dominates_every_grid_point(seed):
    truth, scores = random_instance(np.random.default_rng(seed))
    sm = ScoreMatrix(scores, truth)
    (_, rm), (_, ra) = sweep_threshold(sm)
    for t in (0.01, 0.3, 0.5, 0.77, 0.99):
        rep = f1_scores(sm, t)
        assert rm.micro_f1 >= rep.micro_f1 and ra.macro_f1 >= rep.macro_f1


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 30))
def test_lrap_bounds(seed):
    truth, scores = random_instance(np.random.default_rng(seed))
    value = lrap(ScoreMatrix(scores, truth))
    assert 0 < value <= 1


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 30))
def test_flipping_fn_to_tp_never_lowers_micro_f1(seed):
    rng = np.random.default_rng(seed)
    truth, scores = random_instance(rng)
    pred = (scores >= 0.5).astype(int)
    fn = np.argwhere((pred == 0) & (truth == 1))
    if len(fn) == 0:
        return
    i, j = fn[rng.integers(len(fn))]
    better = pred.copy()
    better[i, j] = 1
    before = f1_scores(ScoreMatrix(pred.astype(float), truth), 0.5).micro_f1
    after = f1_scores(ScoreMatrix(better.astype(float), truth), 0.5).micro_f1
    assert after >= before


@settings(max_examples=60, deadline=None)
@given(labels=hnp.arrays(np.int64, st.integers(1, 30), elements=st.integers(0, 4)),
       seed=st.integers(0, 2 ** 30))
def test_micro_f1_equals_accuracy_on_single_label(labels, seed):
    rng = np.random.default_rng(seed)
    truth = np.eye(5, dtype=int)[labels]
    scores = rng.random((len(labels), 5))
    _, acc = confusion_single(ScoreMatrix(scores, truth))
    pred = np.eye(5)[scores.argmax(1)]
    assert f1_scores(ScoreMatrix(pred, truth), 0.5).micro_f1 == pytest.approx(acc, abs=1e-15)


def test_confusion_examples():
    truth = np.eye(3, dtype=int)[[0, 1, 2, 2]]
    mat, acc = confusion_single(ScoreMatrix(truth.astype(float), truth))
    assert acc == 1.0 and np.array_equal(mat, np.diag([1, 1, 2]))
    mat, acc = confusion_single(ScoreMatrix(np.full((4, 3), 0.2), truth))
    assert mat[:, 0].sum() == 4 and acc == 0.25
    assert np.array_equal(mat.sum(1), truth.sum(0))
    with pytest.raises(ValueError, match="row 0"):
        confusion_single(ScoreMatrix(np.zeros((1, 3)), np.array([[1, 1, 0]])))
    assert is_single_label(ScoreMatrix(np.zeros((4, 3)), truth))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 30))
def test_confusion_invariant_under_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    truth = np.eye(4, dtype=int)[rng.integers(4, size=10)]
    scores = rng.integers(0, 5, (10, 4)) / 4.0
    a, _ = confusion_single(ScoreMatrix(scores, truth))
    b, _ = confusion_single(ScoreMatrix(np.exp(3 * scores) - 7, truth))
    assert np.array_equal(a, b)


def test_score_matrix_validation():
    with pytest.raises(ValueError):
        ScoreMatrix(np.zeros((2, 3)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        ScoreMatrix(np.zeros((1, 2)), np.array([[2, 0]]))
    assert ScoreMatrix(np.zeros((1, 2)), np.zeros((1, 2))).label_names == ("label0", "label1")
