"""Figures written next to the CSV/JSON reports."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

LOSS_GROUPS = {
    "generator": ("total_G",),
    "image": ("rec_I", "per", "sty", "adv_I"),
    "depth": ("rec_D", "grad", "adv_D"),
    "structure": ("seg", "st", "lt"),
    "discriminators": ("total_D_I", "total_D_D"),
}

plt.rcParams.update({
    "figure.dpi": 100,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
})


def read_log(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise ValueError(f"{path}: log has no rows")
    cols = {}
    for k in rows[0]:
        try:
            cols[k] = np.array([float(r[k]) for r in rows])
        except (TypeError, ValueError):
            continue
    return cols


def smooth(y, window):
    if window <= 1 or len(y) < window:
        return y
    k = np.ones(window) / window
    return np.convolve(y, k, mode="valid")


def plot_loss_curves(log_path, out_dir, window=None):
    """One PNG per loss group plus the learning-rate schedule. Returns the paths."""
    cols = read_log(log_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    it = cols["iter"]
    window = window or max(1, len(it) // 50)
    paths = []
    for name, keys in LOSS_GROUPS.items():
        keys = [k for k in keys if k in cols]
        if not keys:
            continue
        fig, ax = plt.subplots(figsize=(5, 3))
        for k in keys:
            y = smooth(cols[k], window)
            ax.plot(it[len(it) - len(y):], y, label=k, lw=1)
        ax.set_xlabel("iteration")
        ax.set_title(f"{name} losses")
        ax.legend(frameon=False)
        fig.tight_layout()
        p = out_dir / f"loss_{name}.png"
        fig.savefig(p)
        plt.close(fig)
        paths.append(p)
    if "lr" in cols:
        fig, ax = plt.subplots(figsize=(5, 2))
        ax.step(it, cols["lr"], where="post", lw=1)
        ax.set_yscale("log")
        ax.set_xlabel("iteration")
        ax.set_title("learning rate")
        fig.tight_layout()
        p = out_dir / "lr.png"
        fig.savefig(p)
        plt.close(fig)
        paths.append(p)
    return paths


def _to_display(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[-1] == 3:
        return np.clip((img + 1) / 2, 0, 1), None
    return np.clip(img, 0, 1), "viridis"


def image_grid(rows, path, titles=None):
    """Save a grid; ``rows`` is a list of lists of HxWx3 ([-1,1]) or HxW ([0,1]) arrays."""
    nr, nc = len(rows), max(len(r) for r in rows)
    fig, axes = plt.subplots(nr, nc, figsize=(1.6 * nc, 1.6 * nr), squeeze=False)
    for i, row in enumerate(rows):
        for j in range(nc):
            ax = axes[i][j]
            ax.axis("off")
            if j < len(row) and row[j] is not None:
                img, cmap = _to_display(row[j])
                ax.imshow(img, cmap=cmap, vmin=0, vmax=1, interpolation="nearest")
            if titles and i == 0 and j < len(titles):
                ax.set_title(titles[j], fontsize=8)
    fig.tight_layout(pad=0.2)
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def seg_palette(num_classes, seed=0):
    rng = np.random.default_rng(seed)
    pal = rng.integers(40, 255, size=(max(num_classes, 1), 3)).astype(np.uint8)
    pal[0] = (90, 90, 90)
    return pal


def plot_metric_bars(summary: dict, path, keys=("hole_psnr", "full_psnr")):
    keys = [k for k in keys if k in summary]
    fig, ax = plt.subplots(figsize=(3.5, 2.5))
    ax.bar(keys, [summary[k] for k in keys], color="0.4")
    ax.set_ylabel("dB")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)
