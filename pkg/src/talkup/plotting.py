"""Matplotlib figure helpers; every function writes a file and returns its path."""
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_loss_curves(records, path, keys=None, title="training losses"):
    """Log-scale curves of each loss key in a list of step records."""
    if not records:
        raise ValueError("no loss records to plot")
    keys = keys or [k for k in records[0] if k != "step"]
    steps = [r["step"] for r in records]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for k in keys:
        vals = np.array([r.get(k, np.nan) for r in records], dtype=float)
        if np.all(vals > 0):
            ax.plot(steps, vals, label=k)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_title(title)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_frame_strip(rows, path, labels=None, max_frames=5):
    """Grid of frames: one row per sequence (T, 3, H, W), nearest-neighbour upscaled."""
    rows = [np.asarray(r)[:max_frames] for r in rows]
    n_cols = max(len(r) for r in rows)
    fig, axes = plt.subplots(len(rows), n_cols, figsize=(1.6 * n_cols, 1.7 * len(rows)), squeeze=False)
    for i, seq in enumerate(rows):
        for j in range(n_cols):
            ax = axes[i, j]
            ax.axis("off")
            if j < len(seq):
                ax.imshow(np.clip(seq[j].transpose(1, 2, 0), 0, 1), interpolation="nearest")
        if labels:
            axes[i, 0].set_title(labels[i], fontsize=8, loc="left")
    return _save(fig, path)


def plot_bpp_table(rows, path):
    """Bar chart of BPP per method (rows with a numeric ``bpp``)."""
    rows = [r for r in rows if isinstance(r.get("bpp"), (int, float))]
    fig, ax = plt.subplots(figsize=(6, 3))
    names = [r["method"] for r in rows]
    colours = ["tab:blue" if r.get("provenance") == "recomputed" else "tab:gray" for r in rows]
    ax.barh(names, [r["bpp"] for r in rows], color=colours)
    ax.set_xscale("log")
    ax.set_xlabel("bits per pixel")
    ax.invert_yaxis()
    return _save(fig, path)


def plot_ablation(rows, metric, path, group="setting"):
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar([str(r[group]) for r in rows], [r[metric] for r in rows], color="tab:orange")
    ax.set_ylabel(metric)
    ax.set_xlabel(group)
    return _save(fig, path)


def plot_sync_scores(scores, labels, path):
    """Histogram of discriminator cosines for in-sync vs shifted pairs."""
    scores, labels = np.asarray(scores), np.asarray(labels).astype(bool)
    fig, ax = plt.subplots(figsize=(5, 3))
    bins = np.linspace(-1, 1, 41)
    ax.hist(scores[labels], bins=bins, alpha=0.6, label="in sync")
    ax.hist(scores[~labels], bins=bins, alpha=0.6, label="shifted")
    ax.set_xlabel("cosine")
    ax.legend()
    return _save(fig, path)
