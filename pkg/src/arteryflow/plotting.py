"""PNG figures written next to the CSV outputs of the command-line tools."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no software/version stamp, so identical data gives identical bytes
_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(Path(path), dpi=100, metadata=_META)
    plt.close(fig)


def plot_loss(history, path, title="training"):
    h = np.asarray(history, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(h[:, 0], h[:, 1], label="train")
    ax.plot(h[:, 0], h[:, 2], label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("L1 loss [mm/s]")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.legend()
    _save(fig, path)


def plot_metrics(report, path, title="evaluation"):
    x = np.arange(len(report.labels))
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.5))
    for ax, values, name in zip(axes, (100 * report.nmae, 100 * report.eps, report.cos),
                                ("NMAE [%]", "eps [%]", "cos")):
        ax.bar(x, values, color="tab:blue")
        ax.set_xticks(x, report.labels, rotation=90, fontsize=7)
        ax.set_title(name)
    fig.suptitle(title)
    _save(fig, path)


def plot_efficiency(result, sizes, path, title="test error against training-set size"):
    fig, ax = plt.subplots(figsize=(6, 4))
    for model in sorted({r[0] for r in result.rows}):
        pts = np.array([(n, e) for m, n, _, e in result.rows if m == model])
        ax.scatter(pts[:, 0], 100 * pts[:, 1], s=12, alpha=0.4)
        ax.plot(sizes, 100 * result.curve(model, sizes), marker="o", label=f"{model} (median)")
    ax.set_xscale("log", base=2)
    ax.set_xticks(sizes, [str(s) for s in sizes])
    ax.set_xlabel("training tubes")
    ax.set_ylabel("eps [%]")
    ax.set_title(title)
    ax.legend()
    _save(fig, path)
