"""Report figures rendered next to the delimited outputs.

Every report-emitting stage can drop a PNG beside its JSON/JSONL file:
consensus-level histogram, question-type distribution, and the evaluation
summary. Rendering is deterministic (fixed size/dpi, Agg backend, no
timestamps) so repeated pipeline runs stay byte-identical.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .consensus import FrequencyReport
from .dataset import DatasetStats
from .evaluate import EvalReport

_SAVE_KW = {"dpi": 120, "metadata": {"Software": "geodistill"}}


def save_consensus_histogram(report: FrequencyReport, path: str | Path) -> Path:
    path = Path(path)
    levels = list(range(report.n, -1, -1))
    pcts = report.percentages
    heights = [pcts.get(level, 0.0) for level in levels]

    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    bars = ax.bar([str(l) for l in levels], heights, color="#4878b0")
    for bar, h in zip(bars, heights):
        if h:
            ax.annotate(
                f"{h:.1f}", (bar.get_x() + bar.get_width() / 2, h),
                ha="center", va="bottom", fontsize=8,
            )
    ax.set_xlabel("consensus level (matching votes)")
    ax.set_ylabel("% of questions")
    ax.set_title(f"answer agreement over {report.total} questions (n={report.n})")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def save_type_distribution(stats: DatasetStats, path: str | Path) -> Path:
    path = Path(path)
    labels = [t.value for t in stats.type_distribution]
    values = list(stats.type_distribution.values())

    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.barh(labels[::-1], values[::-1], color="#6aa66a")
    for i, v in enumerate(values[::-1]):
        ax.annotate(f"{v:.1f}%", (v, i), va="center", ha="left", fontsize=8)
    ax.set_xlabel("% of samples")
    ax.set_title(
        f"{stats.sample_count} samples · avg think {stats.avg_think_words:.0f} w · "
        f"avg answer {stats.avg_answer_words:.0f} w"
    )
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def save_eval_summary(report: EvalReport, path: str | Path) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6.0, 3.2))
    ax.bar(["correct", "incorrect"], [report.correct, report.total - report.correct],
           color=["#6aa66a", "#b05050"])
    ax.set_ylabel("items")
    ax.set_title(f"Top-1 accuracy {report.accuracy:.2%} ({report.correct}/{report.total})")
    tag_pcts = report.tag_percentages()
    if tag_pcts:
        text = "\n".join(f"{tag}: {pct:.1f}% of errors" for tag, pct in tag_pcts.items())
        ax.annotate(text, (0.98, 0.95), xycoords="axes fraction",
                    ha="right", va="top", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path
