#!/usr/bin/env python3

import argparse
import glob
import os

import pandas as pd


def load_run(directory: str) -> pd.DataFrame:
    """Concatenate the per-scene metric rows of one pipeline output directory."""
    files = sorted(glob.glob(os.path.join(directory, "*.csv")))
    files = [f for f in files if os.path.basename(f) != "ablation.csv"]
    if not files:
        raise SystemExit(f"no per-scene CSV files in {directory}")
    return pd.concat([pd.read_csv(f) for f in files], ignore_index=True)


def main():
    parser = argparse.ArgumentParser(description="Compare per-scene metrics of two pipeline runs")
    parser.add_argument("first")
    parser.add_argument("second")
    args = parser.parse_args()

    first, second = load_run(args.first), load_run(args.second)
    merged = first.merge(second, on="scene_id", suffixes=("_a", "_b"))
    print(f"Loaded: {args.first} ({len(first)} scenes)")
    print(f"Loaded: {args.second} ({len(second)} scenes)")
    print(f"Shared scenes: {len(merged)}")

    print("\n=== MEAN METRICS ===")
    for metric in ("iou2d", "corner_error_m", "spurious_fraction"):
        a, b = merged[f"{metric}_a"].mean(), merged[f"{metric}_b"].mean()
        print(f"{metric:<18} {a:>8.4f} {b:>8.4f} {b - a:>+8.4f}")

    print("\n=== LARGEST IoU DIFFERENCES ===")
    merged["iou_delta"] = merged["iou2d_b"] - merged["iou2d_a"]
    worst = merged.reindex(merged["iou_delta"].abs().sort_values(ascending=False).index).head(5)
    for _, row in worst.iterrows():
        print(f"  {row['scene_id']}: {row['iou2d_a']:.4f} -> {row['iou2d_b']:.4f}")


if __name__ == "__main__":
    main()
