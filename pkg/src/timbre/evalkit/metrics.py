"""Multi-label metrics: thresholded precision/recall/F1, LRAP and argmax confusion."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_GRID = tuple(round(0.01 * k, 2) for k in range(1, 100))


@dataclass(frozen=True)
class ScoreMatrix:
    """``scores`` (N x M) against binary ``truth`` (N x M)."""

    scores: np.ndarray
    truth: np.ndarray
    label_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        s = np.asarray(self.scores, dtype=np.float64)
        t = np.asarray(self.truth)
        if s.ndim != 2 or s.shape != t.shape:
            raise ValueError(f"scores {s.shape} and truth {t.shape} must be matching N x M arrays")
        if not np.all((t == 0) | (t == 1)):
            raise ValueError("truth must be binary")
        names = tuple(self.label_names) or tuple(f"label{j}" for j in range(s.shape[1]))
        if len(names) != s.shape[1]:
            raise ValueError("label_names length differs from the number of columns")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "truth", t.astype(np.int64))
        object.__setattr__(self, "label_names", names)

    @property
    def n_labels(self) -> int:
        return self.scores.shape[1]


def _ratio(num: float, den: float) -> float:
    return float(num) / float(den) if den > 0 else 0.0


def _f1(p: float, r: float) -> float:
    return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass(frozen=True)
class ClassStats:
    name: str
    tp: int
    fp: int
    fn: int
    support: int
    precision: float
    recall: float
    f1: float


@dataclass
class MetricsReport:
    threshold: float | None
    per_class: list[ClassStats]
    micro_precision: float
    micro_recall: float
    micro_f1: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    lrap: float | None = None
    extra: dict = field(default_factory=dict)


def f1_scores(sm: ScoreMatrix, threshold: float) -> MetricsReport:
    """Binarize at ``score >= threshold`` and compute per-class, macro and micro rates.

    Macro precision and recall average per-class rates over all labels; macro F1
    is their harmonic mean. Micro rates pool TP/FP/FN over labels. Zero
    denominators give 0.
    """
    pred = (sm.scores >= threshold).astype(np.int64)
    truth = sm.truth
    tp = (pred & truth).sum(0)
    fp = (pred & (1 - truth)).sum(0)
    fn = ((1 - pred) & truth).sum(0)
    per_class = []
    for j, name in enumerate(sm.label_names):
        p = _ratio(tp[j], tp[j] + fp[j])
        r = _ratio(tp[j], tp[j] + fn[j])
        per_class.append(ClassStats(name, int(tp[j]), int(fp[j]), int(fn[j]), int(truth[:, j].sum()),
                                    p, r, _f1(p, r)))
    micro_p = _ratio(tp.sum(), tp.sum() + fp.sum())
    micro_r = _ratio(tp.sum(), tp.sum() + fn.sum())
    macro_p = float(np.mean([c.precision for c in per_class]))
    macro_r = float(np.mean([c.recall for c in per_class]))
    return MetricsReport(float(threshold), per_class, micro_p, micro_r, _f1(micro_p, micro_r),
                         macro_p, macro_r, _f1(macro_p, macro_r))


def sweep_threshold(sm: ScoreMatrix, grid: Sequence[float] = DEFAULT_GRID
                    ) -> tuple[tuple[float, MetricsReport], tuple[float, MetricsReport]]:
    """Best grid threshold for micro F1 and for macro F1; ties go to the lower threshold."""
    if len(grid) == 0:
        raise ValueError("threshold grid is empty")
    if any(not 0.0 <= t <= 1.0 for t in grid):
        raise ValueError("threshold grid values must lie in [0, 1]")
    best_micro = best_macro = None
    for t in sorted(grid):
        rep = f1_scores(sm, t)
        if best_micro is None or rep.micro_f1 > best_micro[1].micro_f1:
            best_micro = (float(t), rep)
        if best_macro is None or rep.macro_f1 > best_macro[1].macro_f1:
            best_macro = (float(t), rep)
    return best_micro, best_macro


def lrap(sm: ScoreMatrix) -> float:
    """Label ranking average precision with ``>=`` tie handling.

    For a true label ``j`` of sample ``i``, ``rank_ij`` counts labels scored at
    least ``f_ij`` and ``L_ij`` counts the true ones among them; the sample's
    precision is the mean of ``|L_ij| / rank_ij`` over its true labels.

    Raises:
        ValueError: a sample has no true label.
    """
    s, y = sm.scores, sm.truth.astype(bool)
    counts = y.sum(1)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise ValueError(f"row {int(empty[0])} has no positive labels")
    total = 0.0
    for i in range(s.shape[0]):
        geq = s[i][None, :] >= s[i][y[i]][:, None]      # (true labels, M)
        rank = geq.sum(1)
        hits = (geq & y[i][None, :]).sum(1)
        total += float(np.sum(hits / rank)) / counts[i]
    return total / s.shape[0]


def argmax_lowest(scores: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties resolve to the lowest index."""
    return np.argmax(np.asarray(scores), axis=1)


def confusion_single(sm: ScoreMatrix) -> tuple[np.ndarray, float]:
    """Argmax confusion matrix (rows truth, columns predictions) and accuracy.

    Raises:
        ValueError: a row does not have exactly one positive label.
    """
    counts = sm.truth.sum(1)
    bad = np.flatnonzero(counts != 1)
    if bad.size:
        raise ValueError(f"row {int(bad[0])} has {int(counts[bad[0]])} positive labels, need exactly 1")
    truth = np.argmax(sm.truth, axis=1)
    pred = argmax_lowest(sm.scores)
    m = sm.n_labels
    mat = np.zeros((m, m), dtype=np.int64)
    np.add.at(mat, (truth, pred), 1)
    return mat, float(np.trace(mat)) / len(truth)


def is_single_label(sm: ScoreMatrix) -> bool:
    return bool(np.all(sm.truth.sum(1) == 1))
