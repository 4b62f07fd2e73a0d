#!/usr/bin/env python3

import argparse
import os
import sys

import matplotlib.pyplot as plt
import pandas as pd

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", ".."))

from perimkit.render import plot_ablation

METRICS = ["iou2d", "corner_error_m", "spurious_fraction"]


def load_ablation(csv_file: str) -> pd.DataFrame:
    """Load an ablation table written by `perimkit ablate`."""
    df = pd.read_csv(csv_file)
    missing = {"variant", "frame_stride", "status"} | set(METRICS)
    missing -= set(df.columns)
    if missing:
        raise SystemExit(f"{csv_file}: missing columns {sorted(missing)}")
    return df


def print_summary(df: pd.DataFrame) -> None:
    print("=== ABLATION SUMMARY ===")
    failed = df[df["status"] != "ok"]
    print(f"Runs: {len(df)}  Failed: {len(failed)}")
    ok = df[df["status"] == "ok"]
    summary = ok.groupby(["variant", "frame_stride"])[METRICS].mean()
    print(summary.to_string(float_format=lambda v: f"{v:.4f}"))
    if len(failed):
        print("\n=== FAILED SCENES ===")
        for _, row in failed.iterrows():
            print(f"  {row['variant']} stride {row['frame_stride']}: {row['scene_id']}")


def plot_variant_bars(df: pd.DataFrame, path: str) -> None:
    """Corner error and spurious fraction per variant at stride 1."""
    ok = df[(df["status"] == "ok") & (df["frame_stride"] == 1)]
    means = ok.groupby("variant")[["corner_error_m", "spurious_fraction"]].mean()
    fig, axes = plt.subplots(1, 2, figsize=(14, 6))
    means["corner_error_m"].plot.bar(ax=axes[0], color="#1f77b4", alpha=0.8)
    axes[0].set_title("Corner Error by Variant", fontsize=14, fontweight="bold")
    axes[0].set_ylabel("Mean corner error (m)", fontsize=12)
    means["spurious_fraction"].plot.bar(ax=axes[1], color="#d62728", alpha=0.8)
    axes[1].set_title("Spurious Corners by Variant", fontsize=14, fontweight="bold")
    axes[1].set_ylabel("Spurious fraction", fontsize=12)
    for ax in axes:
        ax.grid(True, axis="y", alpha=0.3)
        ax.set_xlabel("")
    plt.tight_layout()
    plt.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def main():
    parser = argparse.ArgumentParser(description="Summarize and plot a perimkit ablation table")
    parser.add_argument("csv", nargs="?", default="reports/ablation/ablation.csv")
    parser.add_argument("--out", default="reports/ablation")
    args = parser.parse_args()

    df = load_ablation(args.csv)
    print_summary(df)

    os.makedirs(args.out, exist_ok=True)
    stride_png = os.path.join(args.out, "iou_vs_stride.png")
    plot_ablation(df, stride_png)
    print(f"  Saved: {stride_png}")
    bars_png = os.path.join(args.out, "variants.png")
    plot_variant_bars(df, bars_png)
    print(f"  Saved: {bars_png}")


if __name__ == "__main__":
    main()
