"""Report figures rendered to PNG next to the tabular outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from timbre.evalkit.metrics import DEFAULT_GRID, ScoreMatrix, f1_scores  # noqa: E402

_PNG_META = {"Software": None}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)
    return path


def threshold_sweep(sm: ScoreMatrix, path: str | Path, grid: Sequence[float] = DEFAULT_GRID,
                    chosen: float | None = None) -> Path:
    micro, macro = [], []
    for t in grid:
        rep = f1_scores(sm, t)
        micro.append(rep.micro_f1)
        macro.append(rep.macro_f1)
    fig, ax = plt.subplots(figsize=(6, 3.6))
    ax.plot(grid, micro, label="micro F1")
    ax.plot(grid, macro, label="macro F1", linestyle="--")
    if chosen is not None:
        ax.axvline(chosen, color="0.5", linewidth=0.8)
    ax.set_xlabel("threshold")
    ax.set_ylabel("F1")
    ax.set_ylim(0, 1)
    ax.legend(frameon=False)
    return _save(fig, path)


def per_class_f1(names: Sequence[str], f1: Sequence[float], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(names) + 1.5), 3.6))
    ax.bar(np.arange(len(names)), f1, color="tab:blue")
    ax.set_xticks(np.arange(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right")
    ax.set_ylabel("F1")
    ax.set_ylim(0, 1)
    return _save(fig, path)


def confusion(matrix: np.ndarray, names: Sequence[str], path: str | Path) -> Path:
    """Rows are ground truth, columns predictions; rows normalized to sum to 1."""
    m = np.asarray(matrix, dtype=np.float64)
    norm = m / np.maximum(m.sum(1, keepdims=True), 1)
    fig, ax = plt.subplots(figsize=(0.5 * len(names) + 2.5, 0.5 * len(names) + 2))
    im = ax.imshow(norm, vmin=0, vmax=1, cmap="Blues")
    ax.set_xticks(np.arange(len(names)))
    ax.set_yticks(np.arange(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right")
    ax.set_yticklabels(names)
    ax.set_xlabel("prediction")
    ax.set_ylabel("truth")
    fig.colorbar(im, ax=ax, fraction=0.046)
    return _save(fig, path)


def params_comparison(rows: Mapping[str, Mapping[str, int]], path: str | Path) -> Path:
    """Grouped bars of per-component counts, one group per configuration."""
    comps = ["frontend", "encoder_conv", "encoder_bn", "lde", "head"]
    names = list(rows)
    x = np.arange(len(comps))
    width = 0.8 / max(1, len(names))
    fig, ax = plt.subplots(figsize=(6.5, 3.6))
    for k, name in enumerate(names):
        ax.bar(x + k * width, [rows[name][c] for c in comps], width, label=name)
    ax.set_xticks(x + width * (len(names) - 1) / 2)
    ax.set_xticklabels(comps)
    ax.set_yscale("log")
    ax.set_ylabel("parameters")
    ax.legend(frameon=False)
    return _save(fig, path)
