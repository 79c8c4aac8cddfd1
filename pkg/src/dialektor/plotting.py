"""Matplotlib figures for corpus reports and fingerprint rollups."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .classifier import REPORT_ROWS, BotFingerprint, CorpusReport  # noqa: E402

COLORS = {"samples": "#4C72B0", "alerts": "#DD8452", "plain": "#8C8C8C", "imf": "#55A868"}


def _finish(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_report(report: CorpusReport, path: str | Path) -> Path:
    """Per-category samples/alerts next to TP rates with and without IMF rules."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4), gridspec_kw={"width_ratios": [3, 2]})
    labels = [c.value.upper() for c in REPORT_ROWS]
    xs = range(len(labels))
    samples = [report.rows[c].samples for c in REPORT_ROWS]
    alerts = [report.rows[c].imf_inconsistency for c in REPORT_ROWS]
    w = 0.38
    ax1.bar([x - w / 2 for x in xs], samples, w, label="samples", color=COLORS["samples"])
    ax1.bar([x + w / 2 for x in xs], alerts, w, label="IMF inconsistency", color=COLORS["alerts"])
    ax1.set_xticks(list(xs))
    ax1.set_xticklabels(labels)
    ax1.set_ylabel("conversations")
    mode = report.mode.value if report.mode else "-"
    ax1.set_title(f"{mode}: {report.total} conversations, {report.scan_count} scans")
    ax1.legend(frameon=False)

    tp = [report.tp_pct or 0.0, report.tp_pct_with_imf or 0.0]
    bars = ax2.bar(["dialect only", "with IMF ext."], tp, color=[COLORS["plain"], COLORS["imf"]])
    for bar, value in zip(bars, tp):
        ax2.annotate(f"{value:.1f}", (bar.get_x() + bar.get_width() / 2, value),
                     ha="center", va="bottom", fontsize=9)
    ax2.set_ylim(0, 105)
    ax2.set_ylabel("TP (%)")
    ax2.set_title("classification")
    return _finish(fig, path)


def plot_fingerprints(rollup: Sequence[BotFingerprint], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 0.6 * max(len(rollup), 1) + 1.5))
    names = [f.name for f in rollup][::-1]
    ax.barh(names, [f.messages for f in rollup][::-1], color=COLORS["samples"], label="messages")
    ax.barh(names, [f.distinct_ips for f in rollup][::-1], color=COLORS["alerts"], height=0.4,
            label="distinct source IPs")
    ax.set_xlabel("count")
    ax.set_title("botnet fingerprints")
    if rollup:
        ax.legend(frameon=False, loc="lower right")
    else:
        ax.text(0.5, 0.5, "no bot dialects matched", ha="center", va="center", transform=ax.transAxes)
    return _finish(fig, path)
