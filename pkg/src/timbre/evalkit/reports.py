"""Score files, metric reports and embedding tables."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from timbre.evalkit.metrics import (DEFAULT_GRID, MetricsReport, ScoreMatrix, confusion_single,
                                    f1_scores, is_single_label, lrap, sweep_threshold)

THRESHOLD_SOURCES = ("test", "val")


def write_scores(path: str | Path, ids: Sequence[str], sm: ScoreMatrix) -> None:
    """JSON Lines ``{id, scores, truth}``, one object per item."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for i, item in enumerate(ids):
            fh.write(json.dumps({"id": item, "scores": [float(v) for v in sm.scores[i]],
                                 "truth": [int(v) for v in sm.truth[i]]}, sort_keys=True) + "\n")


def read_scores(path: str | Path, label_names: Sequence[str] = ()) -> tuple[list[str], ScoreMatrix]:
    ids, scores, truth = [], [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                ids.append(rec["id"])
                scores.append(rec["scores"])
                truth.append(rec["truth"])
    return ids, ScoreMatrix(np.asarray(scores, float), np.asarray(truth), tuple(label_names))


def _summary(rep: MetricsReport) -> dict:
    return {
        "threshold": rep.threshold,
        "micro": {"precision": rep.micro_precision, "recall": rep.micro_recall, "f1": rep.micro_f1},
        "macro": {"precision": rep.macro_precision, "recall": rep.macro_recall, "f1": rep.macro_f1},
        "per_class": [asdict(c) for c in rep.per_class],
    }


def evaluate(test: ScoreMatrix, *, val: ScoreMatrix | None = None,
             threshold_source: str = "test", grid: Sequence[float] = DEFAULT_GRID) -> dict:
    """Full report: best-threshold F1 (micro and macro), LRAP and, for single-label data, confusion.

    With ``threshold_source="val"`` the thresholds are chosen on ``val`` and
    applied to ``test``.
    """
    if threshold_source not in THRESHOLD_SOURCES:
        raise ValueError(f"threshold_source must be one of {THRESHOLD_SOURCES}")
    if threshold_source == "val":
        if val is None:
            raise ValueError("threshold_source='val' needs validation scores")
        (t_micro, _), (t_macro, _) = sweep_threshold(val, grid)
        best_micro, best_macro = f1_scores(test, t_micro), f1_scores(test, t_macro)
    else:
        (_, best_micro), (_, best_macro) = sweep_threshold(test, grid)
    report = {
        "n_items": int(test.scores.shape[0]),
        "labels": list(test.label_names),
        "threshold_source": threshold_source,
        "micro_f1": best_micro.micro_f1,
        "macro_f1": best_macro.macro_f1,
        "lrap": lrap(test),
        "best_micro": _summary(best_micro),
        "best_macro": _summary(best_macro),
        "at_0.5": _summary(f1_scores(test, 0.5)),
    }
    if is_single_label(test):
        mat, acc = confusion_single(test)
        report["confusion"] = {"matrix": mat.tolist(), "accuracy": acc}
    return report


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_report(out_dir: str | Path, report: dict, stem: str = "report") -> tuple[Path, Path]:
    """``<stem>.json`` (canonical key order) and ``<stem>_per_class.csv`` at the micro-best threshold."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / f"{stem}.json"
    json_path.write_text(canonical_json(report), encoding="utf-8")
    csv_path = out / f"{stem}_per_class.csv"
    rows = report["best_micro"]["per_class"]
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label", "support", "tp", "fp", "fn", "precision", "recall", "f1"])
        for r in rows:
            writer.writerow([r["name"], r["support"], r["tp"], r["fp"], r["fn"],
                             f"{r['precision']:.6f}", f"{r['recall']:.6f}", f"{r['f1']:.6f}"])
    return json_path, csv_path


def write_embeddings(path: str | Path, ids: Sequence[str], labels: Sequence[Sequence[str]],
                     emb: np.ndarray) -> None:
    """Tab-separated: id, comma-joined label names, then one column per dimension."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(["id", "labels"] + [f"e{k}" for k in range(emb.shape[1])])
        for item, names, row in zip(ids, labels, emb):
            writer.writerow([item, ",".join(names)] + [f"{v:.8g}" for v in row])
