"""Primitive 2D/3D operations shared by every stage."""

import math
from typing import Sequence

import numpy as np

from .errors import ParallelLinesError
from .models import Line2D, RigidPose

# Lines closer than 1 degree to parallel are treated as parallel.
EPS_PARALLEL = math.sin(math.radians(1.0))


def transform_point(pose: RigidPose, p: Sequence[float]) -> np.ndarray:
    return pose.rotation @ np.asarray(p, dtype=float) + pose.translation


def intersect_lines(a: Line2D, b: Line2D) -> np.ndarray:
    cross = a.normal[0] * b.normal[1] - a.normal[1] * b.normal[0]
    if abs(cross) <= EPS_PARALLEL:
        raise ParallelLinesError(f"lines are within 1 degree of parallel (|cross| = {abs(cross):.3g})")
    system = np.vstack([a.normal, b.normal])
    return np.linalg.solve(system, np.array([a.offset, b.offset]))


def rotation_z(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_2d(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotation_angle(rotation: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, in radians."""
    cos_angle = (np.trace(rotation) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos_angle, -1.0, 1.0)))


def random_pose(rng: np.random.Generator, translation_scale: float = 1.0) -> RigidPose:
    """Uniformly random rotation (via a unit quaternion) plus a Gaussian translation."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    rotation = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
    return RigidPose(rotation=rotation, translation=rng.normal(scale=translation_scale, size=3))


def look_at_pose(center: Sequence[float], heading: float) -> RigidPose:
    """Level camera at ``center`` looking along world heading angle ``heading``.

    Camera axes: x right, y down (world -z), z forward.
    """
    c, s = math.cos(heading), math.sin(heading)
    rotation = np.array([
        [s, -c, 0.0],
        [0.0, 0.0, -1.0],
        [c, s, 0.0],
    ])
    center = np.asarray(center, dtype=float)
    return RigidPose(rotation=rotation, translation=-rotation @ center)
