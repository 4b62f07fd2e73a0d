"""From labeled wall points to a closed floor perimeter.

The chain run by estimate_perimeter: clusters_from_labels -> peel_clusters ->
merge_clusters -> refine_clusters -> split_clusters -> order_clusters ->
fuse_consecutive -> snap_manhattan -> close_perimeter.
"""

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import norm
from shapely.geometry import LinearRing

from .config import PipelineConfig
from .errors import DegenerateError, DegenerateLayoutError, DimensionMismatchError, TooFewClustersError
from .geometry import EPS_PARALLEL, intersect_lines
from .models import NOISE, Line2D, Perimeter, PointCloud, WallCluster

logger = logging.getLogger(__name__)

MIN_WALL_LENGTH = 1e-6
MAX_REFINE_ROUNDS = 20
# Least-quantile start: candidate lines through point pairs, ranked by this residual quantile.
QUANTILE_TRIALS = 512
QUANTILE = 0.2
PEEL_MIN_POINTS = 10
# Weight of median distance in the extent tour cost; keeps extent gaps dominant.
MEDIAN_WEIGHT = 1e-3


def fit_line(points2d) -> Line2D:
    """Total least squares: normal is the minor eigenvector of the scatter matrix.

    Returned in canonical form, so the normal sign does not depend on the eigensolver.
    """
    pts = np.asarray(points2d, dtype=float).reshape(-1, 2)
    if len(pts) < 2:
        raise DegenerateError("a line needs at least 2 points")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    if np.max(np.linalg.norm(centered, axis=1)) < 1e-12:
        raise DegenerateError("all points coincide")
    _, vectors = np.linalg.eigh(centered.T @ centered)
    normal = vectors[:, 0] / np.linalg.norm(vectors[:, 0])
    return Line2D(normal=normal, offset=float(normal @ centroid)).canonical()


def make_cluster(points2d, line: Optional[Line2D] = None) -> WallCluster:
    pts = np.asarray(points2d, dtype=float)
    return WallCluster(points2d=pts, line=line or fit_line(pts), median=np.median(pts, axis=0))


def clusters_from_labels(cloud: PointCloud, labels) -> List[WallCluster]:
    """One cluster per non-NOISE label, in label order; degenerate groups are skipped."""
    labels = np.asarray(labels)
    if len(labels) != len(cloud):
        raise DimensionMismatchError(f"{len(labels)} labels for {len(cloud)} points")
    clusters = []
    for label in np.unique(labels[labels != NOISE]):
        pts = cloud.xy[labels == label]
        try:
            clusters.append(make_cluster(pts))
        except DegenerateError:
            logger.debug("skipping degenerate cluster %d (%d points)", label, len(pts))
    return clusters


def _same_wall(a: WallCluster, b: WallCluster, theta_merge_deg: float, e_merge: float) -> bool:
    angle = math.degrees(math.acos(min(1.0, abs(float(a.line.normal @ b.line.normal)))))
    if angle >= theta_merge_deg:
        return False
    error = max(np.mean(np.abs(a.line.residuals(b.points2d))), np.mean(np.abs(b.line.residuals(a.points2d))))
    return bool(error < e_merge)


def merge_groups(clusters: Sequence[WallCluster], theta_merge_deg: float, e_merge: float) -> List[List[int]]:
    """Connected components of the pairwise same-wall relation, by smallest member."""
    parent = list(range(len(clusters)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(clusters)):
        for j in range(i + 1, len(clusters)):
            if _same_wall(clusters[i], clusters[j], theta_merge_deg, e_merge):
                parent[max(find(i), find(j))] = min(find(i), find(j))
    groups = {}
    for i in range(len(clusters)):
        groups.setdefault(find(i), []).append(i)
    return [groups[root] for root in sorted(groups)]


def merge_clusters(clusters: Sequence[WallCluster], theta_merge_deg: float = 30.0,
                   e_merge: float = 0.3) -> List[WallCluster]:
    merged = []
    for group in merge_groups(clusters, theta_merge_deg, e_merge):
        if len(group) == 1:
            merged.append(clusters[group[0]])
        else:
            merged.append(make_cluster(np.vstack([clusters[i].points2d for i in group])))
    logger.debug("merged %d clusters into %d", len(clusters), len(merged))
    return merged




def quantile_line(points2d, trials: int = QUANTILE_TRIALS, seed: int = 0) -> Tuple[Line2D, float]:
    """Line through a point pair with the smallest QUANTILE of absolute residuals.

    Returns the line and the noise scale that quantile implies for Gaussian residuals.
    A wall holding a fifth of the points is enough to be found exactly.
    """
    pts = np.asarray(points2d, dtype=float).reshape(-1, 2)
    n = len(pts)
    if n < 2:
        raise DegenerateError("a line needs at least 2 points")
    if n * (n - 1) // 2 <= trials:
        first, second = np.triu_indices(n, 1)
    else:
        rng = np.random.default_rng(seed)
        first = rng.integers(n, size=trials)
        second = rng.integers(n - 1, size=trials)
        second = second + (second >= first)
    delta = pts[second] - pts[first]
    lengths = np.linalg.norm(delta, axis=1)
    ok = lengths > 1e-12
    if not ok.any():
        raise DegenerateError("all points coincide")
    normals = np.column_stack([-delta[ok, 1], delta[ok, 0]]) / lengths[ok, None]
    offsets = np.einsum("ni,ni->n", normals, pts[first[ok]])
    spread = np.quantile(np.abs(pts @ normals.T - offsets), QUANTILE, axis=0)
    best = int(np.argmin(spread))
    scale = float(spread[best]) / norm.ppf(0.5 + QUANTILE / 2.0)
    return Line2D(normal=normals[best], offset=float(offsets[best])), scale


def refine_line(points2d) -> Tuple[Line2D, np.ndarray]:
    """Robust refit: least-quantile start, then TLS on points within 3 robust sigmas until the set settles."""
    pts = np.asarray(points2d, dtype=float).reshape(-1, 2)
    line, scale = quantile_line(pts)
    mask = np.abs(line.residuals(pts)) <= max(3.0 * scale, 1e-9)
    for _ in range(MAX_REFINE_ROUNDS):
        try:
            line = fit_line(pts[mask])
        except DegenerateError:
            break
        res = np.abs(line.residuals(pts))
        keep = res <= max(3.0 * 1.4826 * float(np.median(res[mask])), 1e-9)
        if keep.sum() < 2 or np.array_equal(keep, mask):
            break
        mask = keep
    return line, mask


def peel_lines(points2d, min_points: int = PEEL_MIN_POINTS) -> List[Tuple[Line2D, np.ndarray]]:
    """Take robust lines off a point set one at a time: (line, point indices) per piece.

    Stops when fewer than ``min_points`` points remain or the next line holds fewer.
    """
    pts = np.asarray(points2d, dtype=float).reshape(-1, 2)
    need = max(2, min_points)
    remaining = np.arange(len(pts))
    pieces = []
    while len(remaining) >= need:
        try:
            line, mask = refine_line(pts[remaining])
        except DegenerateError:
            break
        if mask.sum() < need:
            break
        pieces.append((line, remaining[mask]))
        remaining = remaining[~mask]
    return pieces


def peel_clusters(clusters: Sequence[WallCluster], min_points: int = PEEL_MIN_POINTS) -> List[WallCluster]:
    """Split each cluster into the lines it holds; parallel walls sharing a label come apart here."""
    peeled = []
    for cluster in clusters:
        for line, index in peel_lines(cluster.points2d, min_points):
            peeled.append(make_cluster(cluster.points2d[np.sort(index)], line))
    logger.debug("peeled %d clusters into %d lines", len(clusters), len(peeled))
    return peeled


def merge_labels(cloud: PointCloud, labels, theta_merge_deg: float = 30.0, e_merge: float = 0.3,
                 min_points: int = PEEL_MIN_POINTS) -> np.ndarray:
    """Relabel by wall: peel each label into lines, then give lines that merge one label.

    Points on no peeled line become NOISE.
    """
    labels = np.asarray(labels)
    if len(labels) != len(cloud):
        raise DimensionMismatchError(f"{len(labels)} labels for {len(cloud)} points")
    xy = cloud.xy
    members, clusters = [], []
    for label in np.unique(labels[labels != NOISE]):
        index = np.nonzero(labels == label)[0]
        for line, piece in peel_lines(xy[index], min_points):
            members.append(index[piece])
            clusters.append(make_cluster(xy[index[piece]], line))
    out = np.full(len(labels), NOISE, dtype=np.int64)
    for new, group in enumerate(merge_groups(clusters, theta_merge_deg, e_merge)):
        out[np.concatenate([members[i] for i in group])] = new
    return out


def refine_clusters(clusters: Sequence[WallCluster]) -> List[WallCluster]:
    refined = []
    for cluster in clusters:
        line, mask = refine_line(cluster.points2d)
        refined.append(make_cluster(cluster.points2d[mask], line))
    return refined


def split_clusters(clusters: Sequence[WallCluster], split_gap: float = 0.4,
                   min_points: int = 5) -> List[WallCluster]:
    """Break clusters at gaps along their line; pieces keep the parent line."""
    pieces = []
    for cluster in clusters:
        t = cluster.points2d @ cluster.line.direction
        order = np.argsort(t, kind="stable")
        cuts = np.nonzero(np.diff(t[order]) > split_gap)[0] + 1
        parts = np.split(order, cuts)
        if len(parts) == 1:
            pieces.append(cluster)
            continue
        for part in parts:
            if len(part) >= max(2, min_points):
                pieces.append(make_cluster(cluster.points2d[np.sort(part)], cluster.line))
    return pieces


def tour_length(dist: np.ndarray, tour: Sequence[int]) -> float:
    tour = list(tour)
    return float(sum(dist[a, b] for a, b in zip(tour, tour[1:] + tour[:1])))


def _nearest_neighbour_tour(dist: np.ndarray, start: int) -> List[int]:
    tour, left = [start], set(range(len(dist))) - {start}
    while left:
        nxt = min(left, key=lambda j: (dist[tour[-1], j], j))
        tour.append(nxt)
        left.remove(nxt)
    return tour


def _two_opt(dist: np.ndarray, tour: List[int]) -> List[int]:
    n = len(tour)
    improved = True
    while improved:
        improved = False
        for i in range(n - 1):
            for j in range(i + 2, n):
                if i == 0 and j == n - 1:
                    continue
                a, b, c, d = tour[i], tour[i + 1], tour[j], tour[(j + 1) % n]
                if dist[a, c] + dist[b, d] < dist[a, b] + dist[c, d] - 1e-12:
                    tour[i + 1:j + 1] = tour[i + 1:j + 1][::-1]
                    improved = True
    return tour


def tour_order(dist: np.ndarray, multi_start: bool = False) -> List[int]:
    """Closed tour over a symmetric distance matrix, rotated to begin at node 0.

    Nearest neighbour from node 0, then 2-opt. With ``multi_start`` every node is tried
    as the start and the shortest 2-opt result wins (earliest start on ties).
    """
    dist = np.asarray(dist, dtype=float)
    best, best_length = None, np.inf
    for start in range(len(dist)) if multi_start else [0]:
        tour = _two_opt(dist, _nearest_neighbour_tour(dist, start))
        length = tour_length(dist, tour)
        if length < best_length - 1e-12:
            best, best_length = tour, length
    first = best.index(0)
    return best[first:] + best[:first]


def extent_endpoints(cluster: WallCluster) -> np.ndarray:
    """The two ends of a cluster's points projected onto its line."""
    line = cluster.line
    t = cluster.points2d @ line.direction
    return np.array([line.offset * line.normal + s * line.direction for s in (t.min(), t.max())])


def cluster_distances(clusters: Sequence[WallCluster]) -> np.ndarray:
    """Closest gap between wall extents, plus a small median-distance term to break ties."""
    ends = np.array([extent_endpoints(c) for c in clusters])
    gaps = np.linalg.norm(ends[:, None, :, None] - ends[None, :, None, :], axis=-1).min(axis=(2, 3))
    medians = np.array([c.median for c in clusters])
    return gaps + MEDIAN_WEIGHT * cdist(medians, medians)


def order_clusters(clusters: Sequence[WallCluster], metric: str = "median") -> List[WallCluster]:
    """Order clusters along the boundary, starting at the first one.

    ``"median"``: Euclidean distance between cluster medians, one nearest-neighbour start.
    ``"extent"``: gaps between wall extents, best over every start; keeps concave U and T
    rooms in boundary order where median distances jump across the notch.
    """
    if len(clusters) < 3:
        raise TooFewClustersError(f"a closed tour needs at least 3 clusters, got {len(clusters)}")
    if metric == "median":
        medians = np.array([c.median for c in clusters])
        dist = cdist(medians, medians)
        tour = tour_order(dist)
    elif metric == "extent":
        dist = cluster_distances(clusters)
        tour = tour_order(dist, multi_start=True)
    else:
        raise ValueError(f"unknown tour metric '{metric}'")
    logger.debug("%s tour cost %.3f over %d clusters", metric, tour_length(dist, tour), len(tour))
    return [clusters[i] for i in tour]


def fuse_consecutive(tour: Sequence[WallCluster], theta_merge_deg: float = 30.0,
                     e_merge: float = 0.3) -> List[WallCluster]:
    """Fuse tour neighbours that pass the merge gate, re-estimating their line."""
    tour = list(tour)
    changed = True
    while changed and len(tour) > 3:
        changed = False
        for i in range(len(tour)):
            j = (i + 1) % len(tour)
            if _same_wall(tour[i], tour[j], theta_merge_deg, e_merge):
                pts = np.vstack([tour[i].points2d, tour[j].points2d])
                line, mask = refine_line(pts)
                fused = make_cluster(pts[mask], line)
                if j == 0:
                    tour = [fused] + tour[1:i]
                else:
                    tour[i:j + 1] = [fused]
                changed = True
                break
    return tour


def dominant_angle(clusters: Sequence[WallCluster]) -> float:
    """Size-weighted axial mean of wall normal angles, modulo 90 degrees."""
    angles = np.array([c.line.angle for c in clusters])
    weights = np.array([c.size for c in clusters], dtype=float)
    return float(np.angle(np.sum(weights * np.exp(4j * angles))) / 4.0)


def snap_manhattan(clusters: Sequence[WallCluster], enabled: bool = True,
                   dominant: Optional[float] = None) -> List[WallCluster]:
    """Snap each normal to the nearest of the dominant axes, keeping its orientation."""
    if not enabled:
        return list(clusters)
    theta = dominant_angle(clusters) if dominant is None else dominant
    axes = theta + np.arange(4) * math.pi / 2
    axes = np.column_stack([np.cos(axes), np.sin(axes)])
    snapped = []
    for cluster in clusters:
        normal = axes[int(np.argmax(axes @ cluster.line.normal))]
        offset = float(normal @ cluster.points2d.mean(axis=0))
        snapped.append(make_cluster(cluster.points2d, Line2D(normal=normal, offset=offset)))
    return snapped


def _connector(a: WallCluster, b: WallCluster) -> Tuple[np.ndarray, np.ndarray]:
    """Two corners joining parallel walls: a's extent end nearest b, then the foot on b."""
    end = min(extent_endpoints(a), key=lambda p: float(np.linalg.norm(p - b.median)))
    connector = Line2D.through(end, a.line.direction)
    return end, intersect_lines(connector, b.line)


def close_perimeter(clusters: Sequence[WallCluster]) -> Perimeter:
    if len(clusters) < 3:
        raise TooFewClustersError(f"a perimeter needs at least 3 walls, got {len(clusters)}")
    corners = []
    for i, a in enumerate(clusters):
        b = clusters[(i + 1) % len(clusters)]
        cross = a.line.normal[0] * b.line.normal[1] - a.line.normal[1] * b.line.normal[0]
        if abs(cross) > EPS_PARALLEL:
            corners.append(intersect_lines(a.line, b.line))
        else:
            corners.extend(_connector(a, b))
    corners = np.array(corners)
    x, y = corners[:, 0], corners[:, 1]
    if np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y) < 0:
        corners = corners[::-1]
    edges = np.linalg.norm(np.roll(corners, -1, axis=0) - corners, axis=1)
    if np.any(edges <= MIN_WALL_LENGTH):
        raise DegenerateLayoutError("closed layout has a zero-length wall")
    if len(corners) < 3 or not LinearRing(corners).is_simple:
        raise DegenerateLayoutError("closed layout self-intersects")
    return Perimeter(corners=corners)


def estimate_perimeter(cloud: PointCloud, labels, config: PipelineConfig) -> Perimeter:
    clusters = clusters_from_labels(cloud, labels)
    clusters = peel_clusters(clusters)
    clusters = merge_clusters(clusters, config.theta_merge_deg, config.e_merge)
    clusters = refine_clusters(clusters)
    clusters = split_clusters(clusters, config.split_gap)
    tour = order_clusters(clusters, config.tour_metric)
    tour = fuse_consecutive(tour, config.theta_merge_deg, config.e_merge)
    tour = snap_manhattan(tour, config.snap_enabled)
    perimeter = close_perimeter(tour)
    logger.info("perimeter with %d corners from %d walls", len(perimeter.corners), len(tour))
    return perimeter
