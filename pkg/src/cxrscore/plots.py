"""Plot emission for reports and attention maps.

Matplotlib is imported lazily with the Agg backend so the core library never
needs a display. All functions write files and return the path written.
"""

import numpy as np

from .errors import ArgumentError
from .evaluation import EvalReport


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def save_cmc_plot(report: EvalReport, path: str) -> str:
    plt = _plt()
    thresholds = [t for t, _ in report.cmc]
    fractions = [f for _, f in report.cmc]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(thresholds, fractions, marker="o", markersize=3)
    ax.set_xlabel("absolute error threshold")
    ax.set_ylabel("fraction of samples")
    ax.set_title("Cumulative matching curve")
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def save_histogram_plot(report: EvalReport, path: str) -> str:
    plt = _plt()
    lows = [lo for lo, _, _ in report.histogram]
    widths = [hi - lo for lo, hi, _ in report.histogram]
    counts = [c for _, _, c in report.histogram]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar(lows, counts, width=widths, align="edge", edgecolor="black", linewidth=0.5)
    ax.set_xlabel("absolute error")
    ax.set_ylabel("count")
    ax.set_title("Absolute error histogram")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def save_scatter_plot(report: EvalReport, path: str) -> str:
    plt = _plt()
    truths = [r.y_true for r in report.predictions]
    preds = [r.p_total for r in report.predictions]
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.scatter(truths, preds, s=12, alpha=0.6)
    span = [min(truths + preds), max(truths + preds)]
    ax.plot(span, span, color="gray", linewidth=1, linestyle="--")
    ax.set_xlabel("ground truth score")
    ax.set_ylabel("predicted score")
    ax.set_title(f"MAE {report.mae:.3f}, PC {report.pearson:.3f}")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def save_attention_images(
    image: np.ndarray, heat: np.ndarray, heatmap_path: str, overlay_path: str
) -> tuple[str, str]:
    """Write a colormapped heatmap and its overlay on the source image.

    `image` is (H, W, C) in [0, 1]; `heat` is (H, W) on any scale and is
    normalized to [0, 1] for display (a flat map displays as zeros).
    """
    image = np.asarray(image, dtype=np.float32)
    heat = np.asarray(heat, dtype=np.float32)
    if image.ndim != 3 or heat.ndim != 2 or image.shape[:2] != heat.shape:
        raise ArgumentError(
            f"image {image.shape} and heat {heat.shape} must share height and width"
        )
    span = float(heat.max() - heat.min())
    norm = (heat - heat.min()) / span if span > 0 else np.zeros_like(heat)
    from matplotlib import cm

    colored = cm.magma(norm)[:, :, :3].astype(np.float32)
    if image.shape[2] == 1:
        base = np.repeat(image, 3, axis=2)
    else:
        base = image
    overlay = np.clip(0.55 * base + 0.45 * colored, 0.0, 1.0)
    from .data import save_image

    save_image(colored, heatmap_path)
    save_image(overlay, overlay_path)
    return heatmap_path, overlay_path


__all__ = [
    "save_attention_images",
    "save_cmc_plot",
    "save_histogram_plot",
    "save_scatter_plot",
]
