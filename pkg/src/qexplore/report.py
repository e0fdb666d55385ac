"""Delimited reports and the matplotlib figures rendered alongside them."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

RESULT_HEADER = ("app", "repeat", "iteration", "coverage", "unique_crashes")
CURVE_HEADER = ("app", "iteration", "coverage", "unique_crashes")
PROBE_HEADER = ("fcd_pattern", "fcr", "q_value")
STATS_HEADER = ("mixed_pages", "agent_rate", "random_expectation", "difference")

# stripped so figure bytes depend only on the rendered content
_NO_METADATA = {"Software": None}


def write_csv(path: str | Path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def save_coverage_figure(curves: dict[str, list[float]], path: str | Path, title: str) -> Path:
    """One line per app; y is the line-coverage fraction."""
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for label in sorted(curves):
        ys = curves[label]
        ax.plot(np.arange(1, len(ys) + 1), ys, linewidth=0.9, label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("line coverage")
    ax.set_ylim(0.0, 1.0)
    ax.set_title(title)
    if 0 < len(curves) <= 12:
        ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_NO_METADATA)
    plt.close(fig)
    return Path(path)


def save_probe_figure(patterns, fcr_values, q_table: np.ndarray, path: str | Path) -> Path:
    """Heatmap of Q over the probe grid (rows: FCD patterns, cols: FCR)."""
    fig, ax = plt.subplots(figsize=(7.0, 0.5 * len(patterns) + 2.0))
    image = ax.imshow(q_table, aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(fcr_values)), [str(v) for v in fcr_values])
    ax.set_yticks(range(len(patterns)), patterns)
    ax.set_xlabel("FCR (execution count)")
    for i in range(len(patterns)):
        for j in range(len(fcr_values)):
            ax.text(j, i, f"{q_table[i, j]:.2f}", ha="center", va="center", fontsize=7, color="w")
    fig.colorbar(image, ax=ax, label="Q")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_NO_METADATA)
    plt.close(fig)
    return Path(path)


def save_stats_figure(agent_rate: float, random_expectation: float, path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 4.0))
    bars = ax.bar(["agent", "random"], [agent_rate, random_expectation], color=["#2a6fdb", "#aaaaaa"])
    ax.bar_label(bars, fmt="%.3f")
    ax.set_ylim(0.0, 1.0)
    ax.set_ylabel("unexecuted-event pick rate on mixed pages")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_NO_METADATA)
    plt.close(fig)
    return Path(path)
