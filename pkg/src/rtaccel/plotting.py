"""Residual-decay figures rendered from history CSVs.

Plots are pure functions of the CSV contents, so any figure can be
regenerated offline from the delimited output alone.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
# fixed hash salt so element ids, and with them whole SVG files, are
# reproducible byte for byte
matplotlib.rcParams["svg.hashsalt"] = "rtaccel"
import matplotlib.pyplot as plt
import numpy as np

__all__ = ["read_history_csv", "plot_histories"]


def read_history_csv(path):
    """Load one history CSV; returns (k, residual, factor, seconds, solves)."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        z = np.zeros(0)
        return z.astype(int), z, z, z, z.astype(int)
    return (data[:, 0].astype(int), data[:, 1], data[:, 2], data[:, 3],
            data[:, 4].astype(int))


def _label(path) -> str:
    stem = Path(path).stem
    return stem[len("history_"):] if stem.startswith("history_") else stem


def plot_histories(paths, out_path, title: str | None = None):
    """Render a log-scale residual-decay plot for one or more histories."""
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    for path in paths:
        k, res, _, _, _ = read_history_csv(path)
        if len(k) == 0:
            continue
        ax.semilogy(k, res, marker=".", markersize=3, linewidth=1.0,
                    label=_label(path))
    ax.set_xlabel("outer iteration k")
    ax.set_ylabel("weighted residual norm")
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    # drop the creation date so identical CSVs give identical SVG bytes
    if str(out_path).endswith(".svg"):
        fig.savefig(out_path, metadata={"Date": None})
    else:
        fig.savefig(out_path)
    plt.close(fig)
    return Path(out_path)
