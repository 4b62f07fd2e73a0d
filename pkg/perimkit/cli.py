"""Command-line front-end: one subcommand per stage plus end-to-end runs."""

import argparse
import logging
import os
import sys
from typing import Dict, List, Optional

import pandas as pd
from pydantic import ValidationError

from . import io
from .cluster import estimate_normals
from .config import PipelineConfig, SynthConfig, load_config
from .errors import PerimkitError
from .hull import subsample, voxel_fuse
from .metrics import evaluate
from .models import NOISE, SHAPE_CLASSES
from .perimeter import estimate_perimeter
from .pipeline import (FRAME_STRIDES, VARIANTS, alpha_cull, discover_scenes, generate_dataset, label_walls,
                       orientation_hints, run_ablation, run_pipeline, scene_seeds)
from .render import plot_ablation, render_svg

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def add_config_flags(parser: argparse.ArgumentParser, model=PipelineConfig) -> None:
    """One --kebab-case flag per config field; values are validated by the config model."""
    group = parser.add_argument_group("configuration")
    group.add_argument("--config", help="key=value config file")
    for name, field in model.model_fields.items():
        group.add_argument(_flag(name), dest=f"cfg_{name}", metavar="VALUE", default=None,
                           help=f"default: {field.default}")


def config_from_args(args: argparse.Namespace, model=PipelineConfig):
    overrides: Dict[str, object] = {k[len("cfg_"):]: v for k, v in vars(args).items()
                                    if k.startswith("cfg_") and v is not None}
    if getattr(args, "skip_alpha", False):
        overrides["use_alpha"] = False
    if getattr(args, "skip_mask", False):
        overrides["use_mask"] = False
    return load_config(model, args.config, overrides)


def cmd_gen(args) -> int:
    synth = config_from_args(args, SynthConfig)
    written = generate_dataset(synth, args.out, args.count, shape=args.shape, frames=args.frames,
                               depth_noise_sigma=args.depth_noise, internal_wall=args.internal_wall,
                               floor_ceiling=args.floor_ceiling)
    for path in written:
        print(f"  Saved: {path}")
    return 0


def cmd_cull(args) -> int:
    config = config_from_args(args)
    cloud = voxel_fuse(io.read_ply(args.input), config.voxel)
    culled = alpha_cull(cloud, config)
    io.write_ply(args.output, culled)
    print(f"{args.input}: kept {len(culled)}/{len(cloud)} fused points")
    return 0


def cmd_cluster(args) -> int:
    config = config_from_args(args)
    scene_id = os.path.splitext(os.path.basename(args.input))[0]
    sub_seed, cluster_seed, _ = scene_seeds(config.seed, scene_id)
    cloud = io.read_ply(args.input)
    sampled = subsample(cloud, config.n_points, sub_seed)
    oriented = estimate_normals(sampled, config.k_nn, orientation_hints(cloud, sampled))
    labels = label_walls(oriented, config, cluster_seed)
    io.write_ply(args.output, oriented.with_labels(labels))
    print(f"{args.input}: {len(set(labels.tolist()) - {NOISE})} clusters")
    return 0


def cmd_fit(args) -> int:
    config = config_from_args(args)
    cloud = io.read_ply(args.input)
    if cloud.labels is None:
        raise PerimkitError(f"'{args.input}' has no label property")
    perimeter = estimate_perimeter(cloud, cloud.labels, config)
    io.write_perimeter(args.output, perimeter)
    print(f"{args.input}: {len(perimeter.corners)} corners")
    return 0


def cmd_eval(args) -> int:
    config = config_from_args(args)
    report = evaluate(io.read_perimeter(args.perimeter), io.read_perimeter(args.gt),
                      config.tau_match, config.iou_resolution)
    scene_id = os.path.splitext(os.path.basename(args.perimeter))[0]
    row = pd.DataFrame([{"scene_id": scene_id, "iou2d": report.iou2d, "corner_error_m": report.corner_error,
                         "spurious_fraction": report.spurious_fraction}])
    if args.output:
        io.write_table(args.output, row)
    print(f"{scene_id}: iou2d={report.iou2d:.4f} corner_error={report.corner_error:.4f} m "
          f"spurious={report.spurious_fraction:.4f}")
    return 0


def cmd_render(args) -> int:
    gt = io.read_perimeter(args.gt) if args.gt else None
    cloud = io.read_ply(args.cloud) if args.cloud else None
    io.atomic_write_text(args.output, render_svg(io.read_perimeter(args.perimeter), gt, cloud))
    print(f"  Saved: {args.output}")
    return 0


def cmd_pipeline(args) -> int:
    config = config_from_args(args)
    records = discover_scenes(args.inputs, args.out)
    for result in run_pipeline(config, records):
        if result.report is None:
            print(f"{result.scene_id}: {result.corners} corners")
        else:
            r = result.report
            print(f"{result.scene_id}: {result.corners} corners, iou2d={r.iou2d:.4f} "
                  f"corner_error={r.corner_error:.4f} m spurious={r.spurious_fraction:.4f}")
    return 0


def cmd_ablate(args) -> int:
    config = config_from_args(args)
    records = discover_scenes(args.inputs, args.out)
    table = run_ablation(config, records, args.out, variants=args.variants, strides=args.strides)
    csv_path = args.csv or os.path.join(args.out, "ablation.csv")
    io.write_table(csv_path, table)
    print(f"  Saved: {csv_path}")
    if args.plot:
        plot_ablation(table, args.plot)
        print(f"  Saved: {args.plot}")
    summary = table[table["status"] == "ok"].groupby(["variant", "frame_stride"])[
        ["iou2d", "corner_error_m", "spurious_fraction"]].mean()
    print(summary.to_string(float_format=lambda v: f"{v:.4f}"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="perimkit", description="Room perimeters from posed depth or wall clouds")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic scenes")
    p.add_argument("out", help="output directory")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--shape", choices=SHAPE_CLASSES)
    p.add_argument("--frames", type=int, default=0, help="render N frames per scene instead of a PLY")
    p.add_argument("--depth-noise", type=float, default=0.0)
    p.add_argument("--internal-wall", action="store_true")
    p.add_argument("--floor-ceiling", action="store_true")
    add_config_flags(p, SynthConfig)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("cull", help="voxel-fuse and alpha-cull a PLY cloud")
    p.add_argument("input")
    p.add_argument("output")
    add_config_flags(p)
    p.set_defaults(func=cmd_cull)

    p = sub.add_parser("cluster", help="subsample, estimate normals and label wall instances")
    p.add_argument("input")
    p.add_argument("output")
    add_config_flags(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("fit", help="fit a perimeter to a labeled PLY cloud")
    p.add_argument("input")
    p.add_argument("output")
    add_config_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="score a perimeter against ground truth")
    p.add_argument("perimeter")
    p.add_argument("gt")
    p.add_argument("--output", help="CSV file for the metrics row")
    add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="draw a perimeter as SVG")
    p.add_argument("perimeter")
    p.add_argument("output")
    p.add_argument("--gt")
    p.add_argument("--cloud", help="labeled PLY drawn as coloured points")
    p.set_defaults(func=cmd_render)

    for name, func, text in (("pipeline", cmd_pipeline, "run every stage on each scene"),
                             ("ablate", cmd_ablate, "sweep frame strides and stage-skip variants")):
        p = sub.add_parser(name, help=text)
        p.add_argument("inputs", nargs="+", help="PLY files, frame directories, or folders of either")
        p.add_argument("--out", default="reports", help="output directory")
        p.add_argument("--skip-alpha", action="store_true", help="disable alpha culling")
        p.add_argument("--skip-mask", action="store_true", help="ignore wall masks")
        add_config_flags(p)
        p.set_defaults(func=func)
        if name == "ablate":
            p.add_argument("--variants", nargs="+", choices=list(VARIANTS), default=list(VARIANTS))
            p.add_argument("--strides", nargs="+", type=int, default=list(FRAME_STRIDES))
            p.add_argument("--csv", help="ablation table path (default: <out>/ablation.csv)")
            p.add_argument("--plot", help="write an IoU-vs-stride PNG here")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format=LOG_FORMAT)
    try:
        return args.func(args)
    except (PerimkitError, ValidationError) as e:
        print(f"error: {' '.join(str(e).split())}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
