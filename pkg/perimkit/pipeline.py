"""End-to-end scene runs, dataset generation and the ablation sweep."""

import logging
import os
import zlib
from concurrent import futures
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError
from scipy.spatial import cKDTree

from . import io
from .cluster import estimate_normals, extract_labels, optimize_assignment, ransac_planes
from .config import PipelineConfig, SynthConfig
from .errors import FormatError, PerimkitError, StageError
from .hull import alpha_contour, cull_to_contour, delaunay, subsample, voxel_fuse
from .metrics import evaluate
from .models import EvalReport, Intrinsics, Perimeter, PointCloud, SceneRecord
from .perimeter import estimate_perimeter
from .projection import masked_unproject_all
from .render import render_svg
from .synthgen import (generate_scene, inject_floor_ceiling, inject_internal_wall, orbit_poses, render_frames,
                       sample_internal_wall)

logger = logging.getLogger(__name__)

# Cloud inputs: points whose normal leans further than this from horizontal are not wall.
WALL_MAX_NORMAL_Z = 0.5
FRAME_STRIDES = (1, 2, 4, 8, 16, 32)
VARIANTS: Dict[str, Dict[str, bool]] = {
    "baseline": {},
    "no-mask": {"use_mask": False},
    "no-alpha": {"use_alpha": False},
    "no-mask-no-alpha": {"use_mask": False, "use_alpha": False},
}
EXAMPLE_INTRINSICS = Intrinsics(fx=32.0, fy=32.0, cx=32.0, cy=24.0, width=64, height=48)


class SceneResult(BaseModel):
    scene_id: str
    corners: int
    report: Optional[EvalReport] = None


def scene_seeds(seed: int, scene_id: str, count: int = 3) -> List[int]:
    """Per-scene stage seeds that do not depend on worker scheduling."""
    sequence = np.random.SeedSequence([seed, zlib.crc32(scene_id.encode("utf-8"))])
    return [int(s) for s in sequence.generate_state(count, dtype=np.uint32)]


def is_frame_dir(path: str) -> bool:
    return os.path.isdir(path) and os.path.exists(os.path.join(path, "intrinsics.cfg"))


def discover_scenes(inputs: Sequence[str], output_dir: str) -> List[SceneRecord]:
    """Scene records for PLY files, frame directories, or directories holding either."""
    records = []
    for path in inputs:
        if not os.path.exists(path):
            raise FormatError(f"input '{path}' does not exist")
        if is_frame_dir(path):
            candidates = [path]
        elif os.path.isdir(path):
            entries = sorted(os.path.join(path, name) for name in os.listdir(path))
            candidates = [e for e in entries if is_frame_dir(e) or
                          (e.endswith(".ply") and not e.endswith(("_culled.ply", "_labels.ply")))]
        else:
            candidates = [path]
        for candidate in candidates:
            stem = os.path.splitext(os.path.basename(candidate.rstrip("/")))[0]
            gt = candidate[:-len(".ply")] + "_gt.txt" if candidate.endswith(".ply") else None
            records.append(SceneRecord(scene_id=stem, input_path=candidate, output_dir=output_dir,
                                       gt_path=gt if gt and os.path.exists(gt) else None))
    return records


def load_scene(record: SceneRecord, config: PipelineConfig) -> Tuple[PointCloud, Optional[Perimeter]]:
    """Raw wall cloud (normals = orientation hints when known) and ground truth."""
    gt = io.read_perimeter(record.gt_path) if record.gt_path else None
    if os.path.isdir(record.input_path):
        frames, frame_gt = io.read_frames(record.input_path)
        cloud = masked_unproject_all(frames, config.frame_stride, config.use_mask, with_view_normals=True)
        return cloud, gt or frame_gt
    cloud = io.read_ply(record.input_path)
    if config.use_mask and cloud.normals is not None:
        cloud = cloud.select(np.abs(cloud.normals[:, 2]) <= WALL_MAX_NORMAL_Z)
    return cloud.with_labels(None), gt


class _Stages:
    """Runs named stages, wrapping failures in StageError."""

    def __init__(self, scene_id: str):
        self.scene_id = scene_id

    def run(self, stage: str, fn: Callable, *args, **kwargs):
        logger.info("[%s] %s", self.scene_id, stage)
        try:
            return fn(*args, **kwargs)
        except (PerimkitError, ValidationError, ValueError) as e:
            raise StageError(stage, self.scene_id, e) from e


def orientation_hints(raw: PointCloud, cloud: PointCloud) -> Optional[np.ndarray]:
    if raw.normals is None or not len(raw):
        return None
    _, nearest = cKDTree(raw.points).query(cloud.points)
    return cloud.points + raw.normals[nearest]


def alpha_cull(fused: PointCloud, config: PipelineConfig) -> PointCloud:
    if not config.use_alpha:
        return fused
    contour = alpha_contour(delaunay(fused.xy), config.alpha, config.contour_step)
    return cull_to_contour(fused, contour, config.d_cull)


def label_walls(cloud: PointCloud, config: PipelineConfig, seed: int) -> np.ndarray:
    if config.cluster_method == "ransac":
        return ransac_planes(cloud, config.ransac_inlier_tol, config.ransac_min_inliers, config.ransac_max_planes,
                             seed=seed, iterations=config.ransac_iterations)
    assignment = optimize_assignment(cloud, config.cluster_params(seed))
    return extract_labels(assignment, config.min_cluster_points)


def run_scene(config: PipelineConfig, record: SceneRecord) -> SceneResult:
    """All stages for one scene, writing every artifact next to the others."""
    stages = _Stages(record.scene_id)
    sub_seed, cluster_seed, _ = scene_seeds(config.seed, record.scene_id)
    raw, gt = stages.run("ingest", load_scene, record, config)
    fused = stages.run("fuse", voxel_fuse, raw, config.voxel)
    culled = stages.run("cull", alpha_cull, fused, config)
    stages.run("write", io.write_ply, record.culled_path, culled)
    sampled = stages.run("subsample", subsample, culled, config.n_points, sub_seed)
    oriented = stages.run("normals", estimate_normals, sampled, config.k_nn, orientation_hints(raw, sampled))
    labels = stages.run("cluster", label_walls, oriented, config, cluster_seed)
    stages.run("write", io.write_ply, record.labels_path, oriented.with_labels(labels))
    perimeter = stages.run("perimeter", estimate_perimeter, oriented, labels, config)
    stages.run("write", io.write_perimeter, record.perimeter_path, perimeter)
    svg = render_svg(perimeter, gt, oriented.with_labels(labels))
    stages.run("write", io.atomic_write_text, record.svg_path, svg)
    report = None
    if gt is not None:
        report = stages.run("metrics", evaluate, perimeter, gt, config.tau_match, config.iou_resolution)
        row = pd.DataFrame([{"scene_id": record.scene_id, "iou2d": report.iou2d,
                             "corner_error_m": report.corner_error,
                             "spurious_fraction": report.spurious_fraction}])
        stages.run("write", io.write_table, record.csv_path, row)
    return SceneResult(scene_id=record.scene_id, corners=len(perimeter.corners), report=report)


def _resolve_workers(workers: int) -> int:
    return workers or os.cpu_count() or 1


def run_jobs(jobs: Sequence[Tuple[PipelineConfig, SceneRecord]],
             workers: int = 0) -> List[Union[SceneResult, PerimkitError]]:
    """Run scenes in a process pool; each slot holds a result or the scene's error, in job order."""
    workers = _resolve_workers(workers)
    outcomes: List[Union[SceneResult, PerimkitError]] = [None] * len(jobs)
    if workers == 1 or len(jobs) <= 1:
        for i, (config, record) in enumerate(jobs):
            try:
                outcomes[i] = run_scene(config, record)
            except PerimkitError as e:
                outcomes[i] = e
        return outcomes
    with futures.ProcessPoolExecutor(max_workers=workers) as pool:
        pending = {pool.submit(run_scene, config, record): i for i, (config, record) in enumerate(jobs)}
        for done in futures.as_completed(pending):
            try:
                outcomes[pending[done]] = done.result()
            except PerimkitError as e:
                outcomes[pending[done]] = e
    return outcomes


def run_pipeline(config: PipelineConfig, records: Sequence[SceneRecord]) -> List[SceneResult]:
    """Every scene end to end; the first failure (in scene order) is raised after all finish."""
    outcomes = run_jobs([(config, r) for r in records], config.workers)
    for outcome in outcomes:
        if isinstance(outcome, PerimkitError):
            raise outcome
    return outcomes


def run_ablation(config: PipelineConfig, records: Sequence[SceneRecord], output_dir: str,
                 variants: Sequence[str] = tuple(VARIANTS), strides: Sequence[int] = FRAME_STRIDES) -> pd.DataFrame:
    """Sweep stage-skip variants and frame strides; failed scenes are recorded, not raised."""
    jobs, keys = [], []
    for variant in variants:
        for stride in strides:
            varied = config.model_copy(update={**VARIANTS[variant], "frame_stride": stride})
            for record in records:
                if stride != 1 and not os.path.isdir(record.input_path):
                    continue
                out = os.path.join(output_dir, f"{variant}_s{stride}")
                jobs.append((varied, record.model_copy(update={"output_dir": out})))
                keys.append((variant, stride, record.scene_id))
    rows = []
    for (variant, stride, scene_id), outcome in zip(keys, run_jobs(jobs, config.workers)):
        row = {"variant": variant, "frame_stride": stride, "scene_id": scene_id, "status": "ok",
               "iou2d": np.nan, "corner_error_m": np.nan, "spurious_fraction": np.nan}
        if isinstance(outcome, PerimkitError):
            logger.warning("%s", outcome)
            row["status"] = "failed"
        elif outcome.report is not None:
            row.update(iou2d=outcome.report.iou2d, corner_error_m=outcome.report.corner_error,
                       spurious_fraction=outcome.report.spurious_fraction)
        rows.append(row)
    return pd.DataFrame(rows, columns=["variant", "frame_stride", "scene_id", "status", "iou2d",
                                       "corner_error_m", "spurious_fraction"])


def generate_dataset(synth: SynthConfig, output_dir: str, count: int, shape: Optional[str] = None,
                     frames: int = 0, depth_noise_sigma: float = 0.0, internal_wall: bool = False,
                     floor_ceiling: bool = False) -> List[str]:
    """Write ``count`` synthetic scenes (PLY + ground truth, or rendered frame directories)."""
    written = []
    for index in range(count):
        scene_id = f"scene_{index:03d}"
        rng = np.random.default_rng([synth.seed, index])
        scene = generate_scene(synth, seed=int(rng.integers(2**32)), shape=shape)
        gt = Perimeter(corners=scene.skeleton.corners)
        walls = [sample_internal_wall(scene.skeleton, rng)] if internal_wall else []
        if frames:
            directory = os.path.join(output_dir, scene_id)
            poses = orbit_poses(scene.skeleton, frames)
            rendered = render_frames(scene.skeleton, EXAMPLE_INTRINSICS, poses, rng, depth_noise_sigma, walls)
            io.write_frames(directory, rendered, gt)
            written.append(directory)
            continue
        for start, end in walls:
            scene = inject_internal_wall(scene, start, end, synth, rng)
        if floor_ceiling:
            scene = inject_floor_ceiling(scene, synth, rng)
        path = os.path.join(output_dir, f"{scene_id}.ply")
        io.write_ply(path, scene.cloud)
        io.write_perimeter(os.path.join(output_dir, f"{scene_id}_gt.txt"), gt)
        written.append(path)
    logger.info("generated %d scenes in %s", len(written), output_dir)
    return written
