"""Pinhole projection, cross-frame warping and plane-sweep cost volumes."""

import logging
import math
from typing import List, Sequence, Tuple

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import (BehindCameraError, IntrinsicsMismatchError, InvalidRangeError, MissingDepthError,
                     NoNeighborsError, OutOfBoundsError)
from .geometry import rotation_angle
from .models import CameraFrame, CostVolume, Intrinsics, PointCloud

logger = logging.getLogger(__name__)

# Warped coordinates this close to an integer are snapped onto it.
SNAP_TOL = 1e-9
MAX_COST = 1.0


def depth_samples(z_min: float, z_max: float, count: int = 64) -> np.ndarray:
    """Depths whose inverses are evenly spaced between 1/z_min and 1/z_max, ascending."""
    if not 0 < z_min < z_max:
        raise InvalidRangeError(f"need 0 < z_min < z_max, got {z_min}, {z_max}")
    if count < 2:
        raise InvalidRangeError(f"need at least 2 depth samples, got {count}")
    return 1.0 / np.linspace(1.0 / z_min, 1.0 / z_max, count)


def _rays(intrinsics: Intrinsics, u: np.ndarray) -> np.ndarray:
    """Camera-frame rays with unit z through pixel coordinates ``u`` (..., 2)."""
    return np.stack([(u[..., 0] - intrinsics.cx) / intrinsics.fx,
                     (u[..., 1] - intrinsics.cy) / intrinsics.fy,
                     np.ones(u.shape[:-1])], axis=-1)


def _project_camera(intrinsics: Intrinsics, cam: np.ndarray) -> np.ndarray:
    z = cam[..., 2]
    return np.stack([intrinsics.fx * cam[..., 0] / z + intrinsics.cx,
                     intrinsics.fy * cam[..., 1] / z + intrinsics.cy], axis=-1)


def unproject(frame: CameraFrame, u: Sequence[float], z) -> np.ndarray:
    """World point(s) seen at pixel ``u`` with camera depth ``z``."""
    u = np.asarray(u, dtype=float)
    z = np.asarray(z, dtype=float)
    intr = frame.intrinsics
    if np.any(u[..., 0] < 0) or np.any(u[..., 0] > intr.width - 1) \
            or np.any(u[..., 1] < 0) or np.any(u[..., 1] > intr.height - 1):
        raise OutOfBoundsError(f"pixel outside the {intr.width}x{intr.height} image")
    if np.any(z <= 0):
        raise InvalidRangeError("depth must be positive")
    cam = _rays(intr, u) * z[..., None]
    return (cam - frame.pose.translation) @ frame.pose.rotation


def project(frame: CameraFrame, points) -> Tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates and camera depths of world point(s)."""
    cam = frame.pose.apply(points)
    if np.any(cam[..., 2] <= 0):
        raise BehindCameraError("point lies behind the camera")
    return _project_camera(frame.intrinsics, cam), cam[..., 2]


def reproject_with_depth(src: CameraFrame, dst: CameraFrame, u, z) -> Tuple[np.ndarray, np.ndarray]:
    u = np.asarray(u, dtype=float)
    z = np.asarray(z, dtype=float)
    relative = dst.pose.compose(src.pose.inverse())
    cam = relative.apply(_rays(src.intrinsics, u) * z[..., None])
    if np.any(cam[..., 2] <= 0):
        raise BehindCameraError("reprojected point lies behind the destination camera")
    return _project_camera(dst.intrinsics, cam), cam[..., 2]


def reproject(src: CameraFrame, dst: CameraFrame, u, z) -> np.ndarray:
    """Where pixel ``u`` of ``src`` at depth ``z`` lands in ``dst``; may fall outside the image."""
    return reproject_with_depth(src, dst, u, z)[0]


def _snap(coords: np.ndarray) -> np.ndarray:
    nearest = np.rint(coords)
    return np.where(np.abs(coords - nearest) <= SNAP_TOL, nearest, coords)


def build_cost_volume(ref: CameraFrame, neighbors: Sequence[CameraFrame],
                      samples: Sequence[float]) -> CostVolume:
    """Mean absolute intensity difference per depth hypothesis, bilinear sampling.

    Samples that fall outside a neighbour image or behind its camera are left out of
    that pixel's mean; pixels with no valid sample get MAX_COST.
    """
    if not neighbors:
        raise NoNeighborsError("cost volume needs at least one neighbour frame")
    for nbr in neighbors:
        if nbr.intrinsics != ref.intrinsics:
            raise IntrinsicsMismatchError("all frames must share intrinsics")
    intr = ref.intrinsics
    samples = np.asarray(samples, dtype=float)
    u, v = np.meshgrid(np.arange(intr.width, dtype=float), np.arange(intr.height, dtype=float))
    rays = _rays(intr, np.stack([u, v], axis=-1))
    total = np.zeros((len(samples), intr.height, intr.width))
    count = np.zeros_like(total)
    for nbr in neighbors:
        relative = nbr.pose.compose(ref.pose.inverse())
        directions = rays @ relative.rotation.T
        for d, z in enumerate(samples):
            cam = z * directions + relative.translation
            depth = cam[..., 2]
            with np.errstate(divide="ignore", invalid="ignore"):
                px = _snap(intr.fx * cam[..., 0] / depth + intr.cx)
                py = _snap(intr.fy * cam[..., 1] / depth + intr.cy)
            valid = (depth > 0) & (px >= 0) & (px <= intr.width - 1) & (py >= 0) & (py <= intr.height - 1)
            sampled = map_coordinates(nbr.image, [np.where(valid, py, 0.0), np.where(valid, px, 0.0)],
                                      order=1, mode="nearest")
            total[d] += np.where(valid, np.abs(ref.image - sampled), 0.0)
            count[d] += valid
    values = np.where(count > 0, total / np.maximum(count, 1), MAX_COST)
    logger.debug("cost volume %s from %d neighbours", values.shape, len(neighbors))
    return CostVolume(values=values, depth_samples=samples)


def depth_from_cost(volume: CostVolume) -> np.ndarray:
    """Winner-take-all depth map (lowest index on ties)."""
    return volume.depth_samples[np.argmin(volume.values, axis=0)]


def select_neighbors(ref: CameraFrame, candidates: Sequence[CameraFrame], max_translation: float = 0.3,
                     max_rotation_deg: float = 15.0) -> List[CameraFrame]:
    limit = math.radians(max_rotation_deg)
    selected = []
    for cand in candidates:
        relative = cand.pose.compose(ref.pose.inverse())
        if np.linalg.norm(relative.translation) < max_translation and rotation_angle(relative.rotation) < limit:
            selected.append(cand)
    return selected


def masked_unproject_all(frames: Sequence[CameraFrame], stride: int = 1, use_mask: bool = True,
                         with_view_normals: bool = False) -> PointCloud:
    """World cloud from every ``stride``-th frame's valid (and wall-masked) depth pixels.

    With ``with_view_normals`` the normals field holds unit vectors from each point
    back to the camera that saw it.
    """
    if stride < 1:
        raise InvalidRangeError("stride must be at least 1")
    points, views = [], []
    for index, frame in enumerate(frames[::stride]):
        if frame.depth is None:
            raise MissingDepthError(f"frame {index * stride} has no depth raster")
        keep = frame.depth > 0
        if use_mask and frame.wall_mask is not None:
            keep &= frame.wall_mask
        v, u = np.nonzero(keep)
        cam = _rays(frame.intrinsics, np.column_stack([u, v]).astype(float)) * frame.depth[v, u][:, None]
        world = (cam - frame.pose.translation) @ frame.pose.rotation
        points.append(world)
        if with_view_normals:
            toward = frame.pose.center - world
            views.append(toward / np.linalg.norm(toward, axis=1, keepdims=True))
    if not points:
        return PointCloud.empty()
    normals = np.vstack(views) if with_view_normals else None
    cloud = PointCloud(points=np.vstack(points), normals=normals)
    logger.info("unprojected %d points from %d frames", len(cloud), len(points))
    return cloud
