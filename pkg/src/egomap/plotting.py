"""Report figures, rendered off-screen to PNG files.

All figures go through :func:`savefig`, which drops the PNG software tag
so identical inputs give identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .detection import precision_recall_curve  # noqa: E402

STYLE = {
    "axes.labelsize": 8,
    "axes.titlesize": 8,
    "axes.linewidth": 0.6,
    "font.size": 8,
    "legend.fontsize": 7,
    "lines.linewidth": 1.0,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "xtick.direction": "in",
    "ytick.direction": "in",
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "image.interpolation": "nearest",
}


def savefig(fig, path):
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return str(path)


def plot_pr_curves(predictions, ground_truth, path, thresholds=(0.33, 0.5, 0.75), mode="box"):
    """Precision-recall curves, one per IoU threshold."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.4, 2.8))
        for t in thresholds:
            recall, precision = precision_recall_curve(predictions, ground_truth, t, mode)
            # precision envelope, as used for AP
            env = np.maximum.accumulate(precision[::-1])[::-1] if len(precision) else precision
            ax.step(np.concatenate([[0.0], recall]), np.concatenate([env[:1], env]), where="pre", label=f"IoU {t:g}")
        ax.set_xlim(0, 1.02)
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.set_title(f"{mode} detections")
        ax.legend(loc="lower left", frameon=False)
        fig.tight_layout()
        return savefig(fig, path)


def plot_egomotion_errors(errors, path, tolerance=10.0):
    """Histograms of azimuth and elevation errors (degrees) with the tolerance marked."""
    errors = np.asarray(errors, dtype=float).reshape(-1, 2)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(5.0, 2.2), sharey=True)
        top = max(float(errors.max(initial=0.0)), tolerance) * 1.1
        bins = np.linspace(0.0, top, 23)
        for ax, col, name in zip(axes, errors.T, ("azimuth", "elevation")):
            ax.hist(col, bins=bins, color="0.35")
            ax.axvline(tolerance, color="C3", linestyle="--", linewidth=0.8)
            ax.set_xlabel(f"{name} error (deg)")
        axes[0].set_ylabel("frames")
        fig.tight_layout()
        return savefig(fig, path)


def plot_view_prediction(true_rgb, pred_rgb, true_depth, pred_depth, path):
    """Rendered vs predicted RGB and depth, side by side."""
    finite = np.concatenate([true_depth[np.isfinite(true_depth)], pred_depth[np.isfinite(pred_depth)]])
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    panels = [
        (np.clip(true_rgb, 0, 1), "rendered", None),
        (np.clip(pred_rgb, 0, 1), "predicted", None),
        (np.where(np.isfinite(true_depth), true_depth, np.nan), "rendered depth", "viridis"),
        (np.where(np.isfinite(pred_depth), pred_depth, np.nan), "predicted depth", "viridis"),
    ]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 4, figsize=(6.4, 1.9))
        for ax, (img, title, cmap) in zip(axes, panels):
            if cmap is None:
                ax.imshow(img)
            else:
                ax.imshow(img, cmap=cmap, vmin=lo, vmax=hi)
            ax.set_title(title)
            ax.set_axis_off()
        fig.tight_layout()
        return savefig(fig, path)


def save_slice_png(slice2d, path, vmin=None, vmax=None):
    """Write a 2D array as an 8-bit grayscale PNG (no axes), scaled to [vmin, vmax]."""
    arr = np.asarray(slice2d, dtype=float)
    lo = float(arr.min()) if vmin is None else float(vmin)
    hi = float(arr.max()) if vmax is None else float(vmax)
    scaled = np.zeros_like(arr) if hi <= lo else np.clip((arr - lo) / (hi - lo), 0.0, 1.0)
    plt.imsave(path, scaled, cmap="gray", vmin=0.0, vmax=1.0, format="png", metadata={"Software": None})
    return str(path)
