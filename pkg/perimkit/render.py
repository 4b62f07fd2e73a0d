"""SVG floor plans and ablation charts."""

from typing import Optional

import matplotlib
import numpy as np
import pandas as pd
from matplotlib import colormaps
from matplotlib.colors import to_hex

from .models import NOISE, Perimeter, PointCloud

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

PX_PER_M = 50.0
MARGIN_PX = 20.0
NOISE_COLOR = "#bbbbbb"


def _label_color(label: int) -> str:
    if label == NOISE:
        return NOISE_COLOR
    return to_hex(colormaps["tab20"](int(label) % 20))


def render_svg(perimeter: Perimeter, gt: Optional[Perimeter] = None, cloud: Optional[PointCloud] = None) -> str:
    """Top-down plan at 1 m = 50 px; y grows upward in world, downward in the SVG."""
    extents = [perimeter.corners] + ([gt.corners] if gt is not None else [])
    if cloud is not None and len(cloud):
        extents.append(cloud.xy)
    both = np.vstack(extents)
    lo, hi = both.min(axis=0), both.max(axis=0)
    width, height = (hi - lo) * PX_PER_M + 2 * MARGIN_PX

    def px(p):
        return (p[0] - lo[0]) * PX_PER_M + MARGIN_PX, (hi[1] - p[1]) * PX_PER_M + MARGIN_PX

    def path(corners):
        pts = [px(c) for c in corners]
        return "M" + " L".join(f"{x:.3f},{y:.3f}" for x, y in pts) + " Z"

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.3f}" height="{height:.3f}" '
        f'viewBox="0 0 {width:.3f} {height:.3f}">',
        f'<rect x="0" y="0" width="{width:.3f}" height="{height:.3f}" fill="white"/>',
    ]
    if cloud is not None:
        labels = cloud.labels if cloud.labels is not None else np.full(len(cloud), NOISE)
        for p, label in zip(cloud.xy, labels):
            x, y = px(p)
            out.append(f'<circle cx="{x:.3f}" cy="{y:.3f}" r="1.500" fill="{_label_color(int(label))}"/>')
    if gt is not None:
        out.append(f'<path d="{path(gt.corners)}" fill="none" stroke="#2ca02c" stroke-width="2.000" '
                   'stroke-dasharray="6,4"/>')
    out.append(f'<path d="{path(perimeter.corners)}" fill="none" stroke="#d62728" stroke-width="2.500"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_ablation(table: pd.DataFrame, path: str) -> None:
    """Mean IoU against frame stride, one line per variant."""
    ok = table[table["status"] == "ok"]
    summary = ok.groupby(["variant", "frame_stride"])["iou2d"].mean().reset_index()
    plt.figure(figsize=(10, 6))
    for variant, rows in summary.groupby("variant"):
        plt.plot(rows["frame_stride"], rows["iou2d"], marker="o", linewidth=2, label=variant)
    plt.xscale("log", base=2)
    plt.title("2D IoU vs Frame Stride", fontsize=16, fontweight="bold")
    plt.xlabel("Frame stride", fontsize=12)
    plt.ylabel("Mean 2D IoU", fontsize=12)
    plt.ylim(0, 1.05)
    plt.grid(True, alpha=0.3)
    plt.legend()
    plt.tight_layout()
    plt.savefig(path, dpi=150, bbox_inches="tight")
    plt.close()
