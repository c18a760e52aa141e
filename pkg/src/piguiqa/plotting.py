"""Figure rendering: prediction/MOS scatter plots and feature-map images."""

import json

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .core import write_image


def _metadata(config):
    return {"Description": json.dumps(config or {}, sort_keys=True)}


def scatter_with_fit(pred, mos, fivepl, path, title=None, config=None):
    """Scatter of predictions vs MOS with the fitted 5PL curve in red."""
    pred = np.asarray(pred, dtype=np.float64)
    mos = np.asarray(mos, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(4.5, 4.0), dpi=120)
    ax.scatter(pred, mos, s=14, c="tab:blue", alpha=0.7, edgecolors="none")
    if pred.size and np.ptp(pred) > 0:
        xs = np.linspace(pred.min(), pred.max(), 200)
        ax.plot(xs, fivepl(xs), color="red", lw=1.5)
    ax.set_xlabel("Predicted score")
    ax.set_ylabel("MOS")
    if title:
        ax.set_title(title, fontsize=10)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, metadata=_metadata(config))
    plt.close(fig)


def normalize_for_display(fmap):
    """Per-channel min-max scaling to [0, 1]; flat channels map to 0."""
    f = np.asarray(fmap, dtype=np.float64)
    lo = f.min(axis=(0, 1), keepdims=True)
    span = f.max(axis=(0, 1), keepdims=True) - lo
    return np.where(span > 0, (f - lo) / np.where(span > 0, span, 1.0), 0.0)


def save_feature_map(fmap, path):
    write_image(path, normalize_for_display(fmap))


def loss_curve(records, path, config=None):
    fig, ax = plt.subplots(figsize=(4.5, 3.0), dpi=120)
    ax.plot([r["epoch"] for r in records], [r["mean_loss"] for r in records], lw=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, metadata=_metadata(config))
    plt.close(fig)
