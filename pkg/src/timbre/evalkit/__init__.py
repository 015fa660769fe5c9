"""Clip inference and multi-label metrics."""

from timbre.evalkit.inference import (aggregate_logits, clip_logits, clip_split, embed_entries,
                                      export_embeddings, score_entries)
from timbre.evalkit.metrics import (DEFAULT_GRID, ClassStats, MetricsReport, ScoreMatrix,
                                    confusion_single, f1_scores, lrap, sweep_threshold)
from timbre.evalkit.reports import evaluate, read_scores, write_report, write_scores

__all__ = [
    "DEFAULT_GRID", "ClassStats", "MetricsReport", "ScoreMatrix", "aggregate_logits",
    "clip_logits", "clip_split", "confusion_single", "embed_entries", "evaluate",
    "export_embeddings", "f1_scores", "lrap", "read_scores", "score_entries", "sweep_threshold",
    "write_report", "write_scores",
]
