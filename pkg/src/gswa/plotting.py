"""Figures written next to the JSON reports.

All figures are drawn on an explicit Agg canvas (no pyplot state) so output
bytes depend only on the inputs and the matplotlib version.
"""

from __future__ import annotations

import io
from typing import Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure
from matplotlib.patches import Rectangle

from .params import atomic_write
from .tiler import CropPlan

OVERLAY_COLOR = "#d62728"
ALPHA_MIN, ALPHA_MAX, ALPHA_EQUAL = 0.1, 0.7, 0.4
_PNG_META = {"Software": None}


def overlay_alphas(weights: Sequence[float]) -> np.ndarray:
    """Map weights affinely onto [0.1, 0.7]; equal weights share the midpoint."""
    w = np.asarray(weights, dtype=np.float64)
    lo, hi = w.min(), w.max()
    if hi - lo <= 1e-12:
        return np.full(w.shape, ALPHA_EQUAL)
    return ALPHA_MIN + (ALPHA_MAX - ALPHA_MIN) * (w - lo) / (hi - lo)


def _png_bytes(fig: Figure, dpi: float) -> bytes:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=dpi, metadata=_PNG_META)
    return buf.getvalue()


def render_heatmap(canvas: np.ndarray, plan: CropPlan, weights: Sequence[float]) -> bytes:
    """PNG of the resized canvas with one translucent box per tile.

    ``weights`` holds one value per tile in plan order.  The image is exactly
    canvas-sized: one inch per tile at ``dpi = tile_size``.
    """
    s = plan.tile_size
    cw, ch = plan.canvas
    fig = Figure(figsize=(plan.cols, plan.rows), dpi=s)
    FigureCanvasAgg(fig)
    ax = fig.add_axes((0, 0, 1, 1))
    ax.set_axis_off()
    ax.imshow(canvas, extent=(0, cw, ch, 0), interpolation="nearest")
    ax.set_xlim(0, cw)
    ax.set_ylim(ch, 0)
    alphas = overlay_alphas(weights)
    for (x, y, w, h), a, wt in zip(plan.tiles, alphas, weights):
        ax.add_patch(Rectangle((x, y), w, h, facecolor=OVERLAY_COLOR, alpha=float(a),
                               edgecolor="white", linewidth=1.0))
        ax.text(x + w / 2, y + h / 2, f"{wt:.3f}", ha="center", va="center",
                fontsize=max(6, s // 20), color="white", fontweight="bold")
    return _png_bytes(fig, s)


def render_ablation(rows: Sequence[dict]) -> bytes:
    """Bar chart of removed weight mass per removal setting."""
    labels = [f"{r['setting']}:{r['k']}" for r in rows]
    mass = [r["removed_weight_mass"] for r in rows]
    fig = Figure(figsize=(4.8, 3.2), dpi=100)
    FigureCanvasAgg(fig)
    ax = fig.add_subplot(1, 1, 1)
    ax.bar(range(len(rows)), mass, color=OVERLAY_COLOR)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels)
    ax.set_ylabel("removed weight mass")
    ax.set_ylim(0, max([1e-3] + list(mass)) * 1.15)
    for i, m in enumerate(mass):
        ax.text(i, m, f"{m:.3f}", ha="center", va="bottom", fontsize=8)
    fig.tight_layout()
    return _png_bytes(fig, 100)


def write_png(data: bytes, path) -> None:
    atomic_write(path, data)
