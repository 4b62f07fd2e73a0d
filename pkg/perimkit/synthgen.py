"""Synthetic labeled wall clouds with ground-truth perimeters.

Random draws happen in a fixed order so that ports can match the sampling
distributionally:

  sample_skeleton: shape class index, per-class dimensions, height, global
      rotation, corner jitter (non-rectilinear mode only); repeated per attempt.
  rasterize_walls: per wall in corner order, Poisson point count, along-wall
      positions, heights, then the (N, 3) Gaussian perturbation when sigma > 0.
  punch_holes: hole count, then per hole the wall index (area weighted),
      along-wall position and radius.
"""

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from matplotlib.path import Path
from pydantic import ValidationError
from shapely.geometry import LineString

from .config import SynthConfig
from .errors import GenerationFailure
from .geometry import look_at_pose, rotation_2d
from .models import NOISE, CameraFrame, Intrinsics, PointCloud, RigidPose, RoomSkeleton, SynthScene

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 1000


def skeleton_from_dims(shape_class: str, dims: Sequence[float], height: float,
                       rotation: float = 0.0) -> RoomSkeleton:
    """Build a rectilinear CCW skeleton from its class dimensions.

    Rectangle (W, H); L (W, H, w1, h1); T (W, a, s, hs, hb); U (W, H, l, r, d).
    """
    if shape_class == "Rectangle":
        w, h = dims
        corners = [(0, 0), (w, 0), (w, h), (0, h)]
    elif shape_class == "L":
        w, h, w1, h1 = dims
        corners = [(0, 0), (w, 0), (w, h1), (w1, h1), (w1, h), (0, h)]
    elif shape_class == "T":
        w, a, s, hs, hb = dims
        corners = [(a, 0), (a + s, 0), (a + s, hs), (w, hs), (w, hs + hb),
                   (0, hs + hb), (0, hs), (a, hs)]
    elif shape_class == "U":
        w, h, left, right, d = dims
        corners = [(0, 0), (w, 0), (w, h), (w - right, h), (w - right, d),
                   (left, d), (left, h), (0, h)]
    else:
        raise ValueError(f"unknown shape class '{shape_class}'")
    corners = np.asarray(corners, dtype=float) @ rotation_2d(rotation).T
    return RoomSkeleton(shape_class=shape_class, corners=corners, height=height)


def _sample_dims(shape_class: str, config: SynthConfig, rng: np.random.Generator) -> List[float]:
    lo, hi = config.edge_length_range
    if shape_class == "Rectangle":
        return [rng.uniform(lo, hi), rng.uniform(lo, hi)]
    if shape_class == "L":
        w, h = rng.uniform(lo, hi), rng.uniform(lo, hi)
        return [w, h, w * rng.uniform(0.3, 0.7), h * rng.uniform(0.3, 0.7)]
    if shape_class == "T":
        w = rng.uniform(lo, hi)
        s = w * rng.uniform(0.25, 0.5)
        a = (w - s) * rng.uniform(0.25, 0.75)
        return [w, a, s, 0.5 * rng.uniform(lo, hi), 0.5 * rng.uniform(lo, hi)]
    w, h = rng.uniform(lo, hi), rng.uniform(lo, hi)
    return [w, h, w * rng.uniform(0.2, 0.35), w * rng.uniform(0.2, 0.35), h * rng.uniform(0.3, 0.6)]


def sample_skeleton(config: SynthConfig, rng: np.random.Generator,
                    shape: Optional[str] = None) -> RoomSkeleton:
    for attempt in range(MAX_ATTEMPTS):
        shape_class = shape or config.shape_classes[int(rng.integers(len(config.shape_classes)))]
        dims = _sample_dims(shape_class, config, rng)
        height = rng.uniform(*config.height_range)
        rotation = rng.uniform(0.0, math.pi / 2) if config.global_rotation else 0.0
        try:
            skeleton = skeleton_from_dims(shape_class, dims, height, rotation)
            if not config.rectilinear:
                jitter = rng.uniform(-config.corner_jitter, config.corner_jitter, skeleton.corners.shape)
                skeleton = RoomSkeleton(shape_class=shape_class, corners=skeleton.corners + jitter,
                                        height=height)
        except (ValidationError, ValueError):
            continue
        logger.debug("sampled %s skeleton after %d attempt(s)", shape_class, attempt + 1)
        return skeleton
    raise GenerationFailure(f"no valid skeleton after {MAX_ATTEMPTS} attempts")


def rasterize_walls(skeleton: RoomSkeleton, config: SynthConfig, rng: np.random.Generator) -> SynthScene:
    points, normals, labels = [], [], []
    for index, (a, b) in enumerate(skeleton.walls):
        edge = b - a
        length = float(np.linalg.norm(edge))
        count = int(rng.poisson(length * skeleton.height * config.points_per_m2))
        s = rng.uniform(0.0, length, count)
        z = rng.uniform(0.0, skeleton.height, count)
        along = edge / length
        xy = a + s[:, None] * along
        pts = np.column_stack([xy, z])
        if config.noise_sigma > 0:
            pts = pts + rng.normal(0.0, config.noise_sigma, pts.shape)
        inward = np.array([-along[1], along[0], 0.0])
        points.append(pts)
        normals.append(np.tile(inward, (count, 1)))
        labels.append(np.full(count, index, dtype=np.int64))
    cloud = PointCloud(points=np.vstack(points), normals=np.vstack(normals),
                       labels=np.concatenate(labels))
    return SynthScene(cloud=cloud, skeleton=skeleton)


def remove_cylinders(scene: SynthScene, centers: np.ndarray, radii: Sequence[float]) -> SynthScene:
    """Delete every point whose XY distance to a vertical cylinder axis is below its radius."""
    keep = np.ones(len(scene.cloud), dtype=bool)
    xy = scene.cloud.xy
    for center, radius in zip(np.asarray(centers, dtype=float).reshape(-1, 2), radii):
        keep &= np.linalg.norm(xy - center, axis=1) >= radius
    return SynthScene(cloud=scene.cloud.select(keep), skeleton=scene.skeleton)


def punch_holes(scene: SynthScene, config: SynthConfig, rng: np.random.Generator) -> SynthScene:
    lo, hi = config.hole_count_range
    count = int(rng.integers(lo, hi + 1))
    if count == 0:
        return scene
    walls = scene.skeleton.walls
    lengths = np.array([np.linalg.norm(b - a) for a, b in walls])
    centers, radii = [], []
    for _ in range(count):
        index = int(rng.choice(len(walls), p=lengths / lengths.sum()))
        a, b = walls[index]
        s = rng.uniform(0.0, lengths[index])
        centers.append(a + s * (b - a) / lengths[index])
        radii.append(rng.uniform(*config.hole_radius_range))
    logger.debug("punching %d holes", count)
    return remove_cylinders(scene, np.array(centers), radii)


def generate_scene(config: SynthConfig, seed: Optional[int] = None,
                   shape: Optional[str] = None) -> SynthScene:
    rng = np.random.default_rng(config.seed if seed is None else seed)
    skeleton = sample_skeleton(config, rng, shape=shape)
    scene = rasterize_walls(skeleton, config, rng)
    return punch_holes(scene, config, rng)


def _wall_patch(start, end, height: float, density: float, sigma: float,
                rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    start, end = np.asarray(start, dtype=float), np.asarray(end, dtype=float)
    edge = end - start
    length = float(np.linalg.norm(edge))
    count = int(rng.poisson(length * height * density))
    s = rng.uniform(0.0, length, count)
    z = rng.uniform(0.0, height, count)
    pts = np.column_stack([start + s[:, None] * edge / length, z])
    if sigma > 0:
        pts = pts + rng.normal(0.0, sigma, pts.shape)
    normal = np.array([-edge[1], edge[0], 0.0]) / length
    return pts, np.tile(normal, (count, 1))


def inject_internal_wall(scene: SynthScene, start: Sequence[float], end: Sequence[float],
                         config: SynthConfig, rng: np.random.Generator) -> SynthScene:
    """Add a free-standing (non-perimeter) wall, labeled NOISE."""
    pts, normals = _wall_patch(start, end, scene.skeleton.height, config.points_per_m2,
                               config.noise_sigma, rng)
    extra = PointCloud(points=pts, normals=normals, labels=np.full(len(pts), NOISE))
    return SynthScene(cloud=PointCloud.concat([scene.cloud, extra]), skeleton=scene.skeleton)


def sample_internal_wall(skeleton: RoomSkeleton, rng: np.random.Generator, clearance: float = 0.8,
                         length_range: Tuple[float, float] = (1.0, 2.5)) -> Tuple[np.ndarray, np.ndarray]:
    """A wall segment parallel to the first skeleton wall, at least ``clearance`` from every wall."""
    polygon = skeleton.polygon
    inner = polygon.buffer(-clearance)
    a, b = skeleton.walls[0]
    along = (b - a) / np.linalg.norm(b - a)
    axes = (along, np.array([-along[1], along[0]]))
    lo, hi = skeleton.corners.min(axis=0), skeleton.corners.max(axis=0)
    for _ in range(MAX_ATTEMPTS):
        center = rng.uniform(lo, hi)
        direction = axes[int(rng.integers(2))]
        half = 0.5 * rng.uniform(*length_range) * direction
        start, end = center - half, center + half
        if inner.contains(LineString([start, end])):
            return start, end
    raise GenerationFailure(f"no internal wall fits after {MAX_ATTEMPTS} attempts")


def inject_floor_ceiling(scene: SynthScene, config: SynthConfig, rng: np.random.Generator,
                         density: Optional[float] = None) -> SynthScene:
    """Add floor and ceiling points inside the skeleton, labeled NOISE."""
    density = config.points_per_m2 if density is None else density
    skeleton = scene.skeleton
    outline = Path(skeleton.corners)
    lo, hi = skeleton.corners.min(axis=0), skeleton.corners.max(axis=0)
    parts, normals = [], []
    for z, nz in ((0.0, 1.0), (skeleton.height, -1.0)):
        count = int(rng.poisson(np.prod(hi - lo) * density))
        xy = rng.uniform(lo, hi, (count, 2))
        xy = xy[outline.contains_points(xy)]
        pts = np.column_stack([xy, np.full(len(xy), z)])
        if config.noise_sigma > 0:
            pts = pts + rng.normal(0.0, config.noise_sigma, pts.shape)
        parts.append(pts)
        normals.append(np.tile([0.0, 0.0, nz], (len(pts), 1)))
    pts = np.vstack(parts)
    extra = PointCloud(points=pts, normals=np.vstack(normals), labels=np.full(len(pts), NOISE))
    return SynthScene(cloud=PointCloud.concat([scene.cloud, extra]), skeleton=skeleton)


def interior_point(skeleton: RoomSkeleton) -> np.ndarray:
    polygon = skeleton.polygon
    centroid = polygon.centroid
    point = centroid if polygon.contains(centroid) else polygon.representative_point()
    return np.array([point.x, point.y])


def orbit_poses(skeleton: RoomSkeleton, count: int, camera_height: float = 1.5,
                radius: float = 0.3, center: Optional[Sequence[float]] = None) -> List[RigidPose]:
    """Level cameras on a small circle inside the room, each looking outward."""
    center = interior_point(skeleton) if center is None else np.asarray(center, dtype=float)
    height = min(camera_height, 0.9 * skeleton.height)
    poses = []
    for i in range(count):
        heading = 2.0 * math.pi * i / count
        position = center + radius * np.array([math.cos(heading), math.sin(heading)])
        poses.append(look_at_pose([position[0], position[1], height], heading))
    return poses


def _texture(points: np.ndarray) -> np.ndarray:
    x, y, z = points[..., 0], points[..., 1], points[..., 2]
    return 0.5 + 0.25 * np.sin(2.1 * x + 0.7 * y) * np.cos(1.3 * z + 0.4 * x) + 0.1 * np.sin(3.7 * y - 2.3 * z)


def render_frames(skeleton: RoomSkeleton, intrinsics: Intrinsics, poses: Sequence[RigidPose],
                  rng: Optional[np.random.Generator] = None, depth_noise_sigma: float = 0.0,
                  internal_walls: Sequence[Tuple[Sequence[float], Sequence[float]]] = ()) -> List[CameraFrame]:
    """Ray-cast the extruded room into depth, wall-mask and texture rasters."""
    w, h = intrinsics.width, intrinsics.height
    u, v = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    rays_cam = np.stack([(u - intrinsics.cx) / intrinsics.fx, (v - intrinsics.cy) / intrinsics.fy,
                         np.ones_like(u)], axis=-1)
    segments = list(skeleton.walls) + [(np.asarray(a, float), np.asarray(b, float)) for a, b in internal_walls]
    frames = []
    for pose in poses:
        origin = pose.center
        dirs = rays_cam @ pose.rotation
        best = np.full((h, w), np.inf)
        is_wall = np.zeros((h, w), dtype=bool)
        for a, b in segments:
            edge = b - a
            denom = dirs[..., 0] * edge[1] - dirs[..., 1] * edge[0]
            rel = a - origin[:2]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (rel[0] * edge[1] - rel[1] * edge[0]) / denom
                s = (rel[0] * dirs[..., 1] - rel[1] * dirs[..., 0]) / denom
            z = origin[2] + t * dirs[..., 2]
            hit = (np.abs(denom) > 1e-12) & (t > 1e-9) & (s >= 0) & (s <= 1) & (z >= 0) & (z <= skeleton.height)
            closer = hit & (t < best)
            best = np.where(closer, t, best)
            is_wall |= closer
        for plane_z in (0.0, skeleton.height):
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (plane_z - origin[2]) / dirs[..., 2]
            closer = np.isfinite(t) & (t > 1e-9) & (t < best)
            best = np.where(closer, t, best)
            is_wall &= ~closer
        valid = np.isfinite(best)
        depth = np.where(valid, best, 0.0)
        hits = origin + depth[..., None] * dirs
        image = np.where(valid, np.clip(_texture(hits), 0.0, 1.0), 0.0)
        if depth_noise_sigma > 0 and rng is not None:
            depth = np.where(valid, np.maximum(depth + rng.normal(0.0, depth_noise_sigma, depth.shape), 0.0), 0.0)
        frames.append(CameraFrame(intrinsics=intrinsics, pose=pose, image=image, depth=depth,
                                  wall_mask=is_wall & valid))
    return frames
