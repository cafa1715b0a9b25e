"""PNG figures for run statistics and provenance cards."""

from __future__ import annotations

import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .provenance import ProvenanceCard, atomic_write  # noqa: E402

_COLORS = {"ADMIT": "#4c8c4a", "QUARANTINE": "#d9a441", "REJECT": "#b5473a"}


def _save(fig, path: str | Path) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=110, metadata={"Software": None})
    plt.close(fig)
    atomic_write(path, buf.getvalue())


def funnel_figure(stats, path: str | Path, title: str = "") -> None:
    """Left: documents remaining after each stage.  Right: per-stage outcome mix."""
    fig, (left, right) = plt.subplots(1, 2, figsize=(11, 4.2))
    names, remaining = zip(*stats.survivors())
    left.barh(range(len(names)), remaining, color="#5b7db1")
    left.set_yticks(range(len(names)), names)
    left.invert_yaxis()
    left.set_xlabel("documents remaining")
    for i, v in enumerate(remaining):
        left.text(v, i, f" {v}", va="center", fontsize=8)

    rows = stats.rows()
    stages = [r[0] for r in rows]
    bottom = [0] * len(rows)
    for col, outcome in ((1, "ADMIT"), (2, "QUARANTINE"), (3, "REJECT")):
        values = [r[col] for r in rows]
        right.bar(stages, values, bottom=bottom, color=_COLORS[outcome], label=outcome.lower())
        bottom = [b + v for b, v in zip(bottom, values)]
    right.set_ylabel("stage verdicts")
    right.legend(fontsize=8, ncol=3, loc="upper center", bbox_to_anchor=(0.5, -0.1), frameon=False)
    right.tick_params(axis="x", labelsize=8)
    fig.suptitle(f"Funnel {title}".strip())
    fig.tight_layout()
    _save(fig, path)


def card_figure(card: ProvenanceCard, path: str | Path) -> None:
    fig, axes = plt.subplots(1, 3, figsize=(13, 4))
    outcome_counts = {"ADMIT": card.admitted, "QUARANTINE": card.quarantined, "REJECT": card.rejected}
    axes[0].bar(list(outcome_counts), list(outcome_counts.values()), color=[_COLORS[k] for k in outcome_counts])
    axes[0].set_title("final verdicts")
    for ax, hist, label in (
        (axes[1], card.rejection_reasons, "rejection reasons"),
        (axes[2], card.source_domains, "source domains"),
    ):
        items = sorted(hist.items(), key=lambda kv: (-kv[1], kv[0]))[:12]
        if items:
            keys, values = zip(*items)
            ax.barh(range(len(keys)), values, color="#777777")
            ax.set_yticks(range(len(keys)), keys, fontsize=7)
            ax.invert_yaxis()
        else:
            ax.text(0.5, 0.5, "none", ha="center", va="center", transform=ax.transAxes)
        ax.set_title(label)
    fig.suptitle(f"{card.dataset_id}  head {card.chain_head_digest[:16]}")
    fig.tight_layout()
    _save(fig, path)
