"""Run reports: JSON summary, per-layer table, and the accuracy figure.

The figure is an SVG line chart of test accuracy against cumulative
training wall time, with vertical rules where the phase changes (the
decompose and reconstruct events).  Rendering is pinned to be
byte-deterministic for identical inputs: fixed hash salt, no timestamp
metadata.
"""

from __future__ import annotations

import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .data import read_metrics
from .experiment import LayerDecomposition, RunReport

SVG_HASHSALT = "tuckertrain"


def write_report(report: RunReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2)
        f.write("\n")


def layer_table(reports: list[LayerDecomposition]) -> str:
    """Fixed-width table of per-layer ranks and Eq-level ratios."""
    lines = [f"{'layer':<14}{'K1':>6}{'K2':>6}{'params':>10}{'chain':>10}{'M':>8}{'E':>8}  note"]
    for r in reports:
        k1 = "-" if r.k1 is None else str(r.k1)
        k2 = "-" if r.k2 is None else str(r.k2)
        m = "-" if r.m is None else f"{r.m:.2f}"
        e = "-" if r.e is None else f"{r.e:.2f}"
        note = r.skipped or ""
        lines.append(
            f"{r.layer:<14}{k1:>6}{k2:>6}{r.params_before:>10}{r.params_after:>10}{m:>8}{e:>8}  {note}"
        )
    return "\n".join(lines)


def render_accuracy_figure(csv_paths: list[str], out_path: str) -> None:
    """Accuracy-vs-wall-time SVG; several CSVs overlay as separate lines."""
    plt.rcParams["svg.hashsalt"] = SVG_HASHSALT
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    for path in csv_paths:
        rows = read_metrics(path)
        label = os.path.splitext(os.path.basename(path))[0]
        if len(csv_paths) > 1:
            label = os.path.basename(os.path.dirname(path)) or label
        xs = [r.wall_time_s for r in rows]
        ys = [r.test_acc for r in rows]
        (line,) = ax.plot(xs, ys, marker="o", markersize=2.5, linewidth=1.2, label=label)
        for prev, cur in zip(rows, rows[1:]):
            if cur.phase != prev.phase:
                ax.axvline(cur.wall_time_s, color=line.get_color(), linestyle="--",
                           linewidth=0.8, alpha=0.6)
    ax.set_xlabel("training wall time (s)")
    ax.set_ylabel("test accuracy")
    ax.set_title("accuracy vs training time")
    if any(read_metrics(p) for p in csv_paths):
        ax.legend(loc="lower right", fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)
