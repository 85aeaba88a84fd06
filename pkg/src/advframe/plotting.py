"""Precision/recall figures rendered to files with the non-interactive Agg backend."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import PRPoint  # noqa: E402

# fixed metadata keeps the PNG bytes reproducible
_PNG_META = {"Software": None}


def plot_pr_curves(curves: Mapping[str, Sequence[PRPoint]], path: str | Path,
                   title: str = "Precision/recall over the null offset") -> Path:
    """One line per named curve, recall on x and precision on y, Fmax points marked."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5.0, 4.0), dpi=100)
    for name, curve in curves.items():
        pts = sorted(curve, key=lambda p: p.recall)
        line, = ax.plot([p.recall for p in pts], [p.precision for p in pts], marker=".", label=name)
        best = max(curve, key=lambda p: p.f1)
        ax.plot([best.recall], [best.precision], marker="*", markersize=12, color=line.get_color())
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0.0, 1.02)
    ax.set_ylim(0.0, 1.02)
    ax.grid(True, alpha=0.3)
    ax.set_title(title)
    if curves:
        ax.legend(loc="lower left", fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_bucket_bars(rows: Mapping[str, Mapping[str, float]], path: str | Path,
                     title: str = "AI Fmax by WER bucket") -> Path:
    """Grouped bars: ``rows`` maps bucket name to ``{model: score}``."""
    path = Path(path)
    buckets = list(rows)
    models = sorted({m for r in rows.values() for m in r})
    fig, ax = plt.subplots(figsize=(6.0, 3.5), dpi=100)
    width = 0.8 / max(1, len(models))
    for k, model in enumerate(models):
        xs = [i + k * width for i in range(len(buckets))]
        ax.bar(xs, [rows[b].get(model, 0.0) for b in buckets], width=width, label=model)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(buckets))])
    ax.set_xticklabels(buckets, fontsize="small")
    ax.set_ylim(0.0, 1.0)
    ax.set_ylabel("F1")
    ax.set_title(title)
    if models:
        ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=_PNG_META)
    plt.close(fig)
    return path


def write_curve_tsv(curve: Sequence[PRPoint], path: str | Path) -> Path:
    path = Path(path)
    lines = ["delta\tprecision\trecall\tf1"]
    lines += [f"{p.delta:.4f}\t{p.precision:.6f}\t{p.recall:.6f}\t{p.f1:.6f}" for p in curve]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
