"""Cloud conditioning: voxel fusion, Delaunay/alpha-shape contours, culling, subsampling."""

import logging
import math
from collections import defaultdict
from typing import List

import numpy as np
import shapely
from scipy.spatial import Delaunay, QhullError
from shapely import STRtree

from .errors import DegenerateError, EmptyCloudError, EmptyShapeError, InvalidRangeError
from .models import Contour, PointCloud, Triangulation

logger = logging.getLogger(__name__)


def voxel_fuse(cloud: PointCloud, voxel: float) -> PointCloud:
    """One centroid per occupied voxel; normals and labels are dropped."""
    if voxel <= 0:
        raise InvalidRangeError("voxel size must be positive")
    if not len(cloud):
        return PointCloud.empty()
    keys = np.floor(cloud.points / voxel).astype(np.int64)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    counts = np.bincount(inverse)
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inverse, cloud.points)
    logger.debug("voxel fusion %d -> %d points", len(cloud), len(counts))
    return PointCloud(points=sums / counts[:, None])


def delaunay(points2d) -> Triangulation:
    """Delaunay triangulation with every triangle in CCW order."""
    pts = np.asarray(points2d, dtype=float).reshape(-1, 2)
    if len(pts) < 3:
        raise DegenerateError(f"need at least 3 points to triangulate, got {len(pts)}")
    try:
        simplices = Delaunay(pts).simplices.copy()
    except QhullError as e:
        raise DegenerateError("points are collinear or otherwise degenerate") from e
    a, b, c = pts[simplices[:, 0]], pts[simplices[:, 1]], pts[simplices[:, 2]]
    cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    clockwise = cross < 0
    simplices[clockwise] = simplices[clockwise][:, [0, 2, 1]]
    return Triangulation(vertices=pts, triangles=simplices)


def circumradii(tri: Triangulation) -> np.ndarray:
    """R = abc / 4A per triangle; infinite for zero-area triangles."""
    p = tri.vertices[tri.triangles]
    a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
    b = np.linalg.norm(p[:, 0] - p[:, 2], axis=1)
    c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
    area = 0.5 * np.abs((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                        - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    with np.errstate(divide="ignore"):
        return np.where(area > 0, a * b * c / (4.0 * np.maximum(area, 1e-300)), np.inf)


def alpha_filter(tri: Triangulation, alpha: float) -> np.ndarray:
    """Mask of triangles whose circumradius does not exceed 1/alpha."""
    if alpha <= 0:
        raise InvalidRangeError("alpha must be positive")
    return circumradii(tri) <= 1.0 / alpha


def _boundary_edges(triangles: np.ndarray) -> np.ndarray:
    edges = np.vstack([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    unique, counts = np.unique(edges, axis=0, return_counts=True)
    return unique[counts == 1]


def _chain(edges: np.ndarray) -> List[List[int]]:
    """Walk boundary edges into vertex paths; open chains start at odd-degree vertices."""
    adjacency = defaultdict(list)
    for i, (a, b) in enumerate(edges):
        adjacency[int(a)].append((int(b), i))
        adjacency[int(b)].append((int(a), i))
    used = np.zeros(len(edges), dtype=bool)
    starts = sorted(v for v in adjacency if len(adjacency[v]) % 2) + sorted(adjacency)
    paths = []
    for start in starts:
        while any(not used[i] for _, i in adjacency[start]):
            path, current = [start], start
            while True:
                step = next(((n, i) for n, i in adjacency[current] if not used[i]), None)
                if step is None:
                    break
                current, edge = step
                used[edge] = True
                path.append(current)
                if current == start:
                    break
            paths.append(path)
    return paths


def densify(polyline: np.ndarray, step: float) -> np.ndarray:
    """Resample a polyline so consecutive samples are at most ``step`` apart."""
    out = []
    for a, b in zip(polyline[:-1], polyline[1:]):
        pieces = max(1, math.ceil(np.linalg.norm(b - a) / step))
        t = np.arange(pieces)[:, None] / pieces
        out.append(a + t * (b - a))
    out.append(polyline[-1:])
    return np.vstack(out)


def alpha_contour(tri: Triangulation, alpha: float, step: float = 0.05) -> Contour:
    keep = alpha_filter(tri, alpha)
    if not np.any(keep):
        raise EmptyShapeError(f"alpha={alpha} discards every triangle")
    edges = _boundary_edges(tri.triangles[keep])
    polylines = [tri.vertices[path] for path in _chain(edges)]
    densified = np.vstack([densify(p, step) for p in polylines])
    logger.debug("alpha=%g kept %d/%d triangles, %d boundary edges", alpha, keep.sum(), len(keep), len(edges))
    return Contour(polylines=polylines, densified=densified)


def contour_distance(xy: np.ndarray, contour: Contour) -> np.ndarray:
    """Exact distance from each XY point to the nearest contour segment."""
    segments = np.concatenate([np.stack([p[:-1], p[1:]], axis=1) for p in contour.polylines])
    tree = STRtree(shapely.linestrings(segments))
    distances = np.full(len(xy), np.inf)
    if len(xy):
        index, dist = tree.query_nearest(shapely.points(xy), return_distance=True, all_matches=False)
        distances[index[0]] = dist
    return distances


def cull_to_contour(cloud: PointCloud, contour: Contour, d_cull: float) -> PointCloud:
    if d_cull <= 0:
        raise InvalidRangeError("d_cull must be positive")
    keep = contour_distance(cloud.xy, contour) <= d_cull
    logger.debug("contour culling kept %d/%d points", keep.sum(), len(keep))
    return cloud.select(keep)


def subsample(cloud: PointCloud, n: int, seed) -> PointCloud:
    """Exactly ``n`` points; without replacement when the cloud is large enough."""
    if not len(cloud):
        raise EmptyCloudError("cannot subsample an empty cloud")
    rng = np.random.default_rng(seed)
    index = rng.choice(len(cloud), size=n, replace=len(cloud) < n)
    return cloud.select(index)
