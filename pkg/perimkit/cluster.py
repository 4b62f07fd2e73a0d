"""Plane-instance clustering: oriented-point objective, its gradient, and the optimizers."""

import logging
import math
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import log_softmax, logsumexp, softmax

from .config import ClusterParams
from .errors import DimensionMismatchError, MissingNormalsError, TooFewPointsError
from .models import NOISE, PointCloud, SoftAssignment

logger = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
RANSAC_BATCH = 64
RANSAC_REFITS = 10


def estimate_normals(cloud: PointCloud, k_nn: int = 16, orientation_hint=None) -> PointCloud:
    """PCA normals from k_nn neighbourhoods, flipped to face the hint.

    ``orientation_hint`` may be None (cloud centroid), one 3-vector, or one point per row.
    """
    n = len(cloud)
    if k_nn < 3 or n <= k_nn:
        raise TooFewPointsError(f"need more than k_nn={k_nn} points (and k_nn >= 3), got {n}")
    points = cloud.points
    _, index = cKDTree(points).query(points, k=k_nn)
    neighbourhoods = points[index]
    centered = neighbourhoods - neighbourhoods.mean(axis=1, keepdims=True)
    covariance = np.einsum("nki,nkj->nij", centered, centered) / k_nn
    _, vectors = np.linalg.eigh(covariance)
    normals = vectors[:, :, 0]
    hint = points.mean(axis=0) if orientation_hint is None else np.asarray(orientation_hint, dtype=float)
    flip = np.einsum("ni,ni->n", normals, np.broadcast_to(hint, points.shape) - points) < 0
    normals = np.where(flip[:, None], -normals, normals)
    return cloud.with_normals(normals)


def pair_term(xi, ni, xj, nj) -> float:
    xi, ni, xj, nj = (np.asarray(v, dtype=float) for v in (xi, ni, xj, nj))
    return float((xi - xj) @ ni + (xj - xi) @ nj)


def pair_matrix(points: np.ndarray, normals: np.ndarray) -> np.ndarray:
    """|pair_term| for every ordered pair, zero diagonal."""
    s = np.einsum("ni,ni->n", points, normals)
    m = normals @ points.T
    d = np.abs(s[:, None] - m - m.T + s[None, :])
    np.fill_diagonal(d, 0.0)
    return d


def _checked(cloud: PointCloud, assign: SoftAssignment) -> np.ndarray:
    if cloud.normals is None:
        raise MissingNormalsError("clustering needs oriented normals")
    if len(cloud) != assign.logits.shape[0]:
        raise DimensionMismatchError(f"{len(cloud)} points but {assign.logits.shape[0]} assignment rows")
    return pair_matrix(cloud.points, cloud.normals)


def _objective(pairs: np.ndarray, logits: np.ndarray, beta: float,
               regularizer: str = "columns") -> Tuple[float, float, np.ndarray]:
    n, columns = logits.shape
    k = columns - 1
    probs = softmax(logits, axis=1)
    pk = probs[:, :k]
    norm = n * (n - 1)
    weighted = pairs @ pk
    l_cluster = float(np.sum(weighted * pk) / norm) if norm else 0.0
    grad_p = np.zeros_like(probs)
    if norm:
        grad_p[:, :k] = 2.0 * weighted / norm
    if regularizer == "columns":
        l_reg = float(-np.sum(log_softmax(logits, axis=1)[:, :k]) / n)
        grad_p[:, :k] -= beta / (n * pk)
    elif regularizer == "any":
        log_alive = logsumexp(logits[:, :k], axis=1) - logsumexp(logits, axis=1)
        l_reg = float(-np.mean(log_alive))
        grad_p[:, :k] -= beta / (n * np.exp(log_alive))[:, None]
    else:
        raise ValueError(f"unknown regularizer '{regularizer}'")
    grad = probs * (grad_p - np.sum(grad_p * probs, axis=1, keepdims=True))
    return l_cluster, l_reg, grad


def loss(cloud: PointCloud, assign: SoftAssignment, beta: float,
         regularizer: str = "columns") -> Tuple[float, float, float]:
    """(L_cluster, L_reg, total): pair-averaged co-assignment cost plus reject penalty.

    ``regularizer="columns"`` sums -log p over every plane column; ``"any"`` charges
    -log(1 - p_reject), the mass a point keeps on planes at all.
    """
    l_cluster, l_reg, _ = _objective(_checked(cloud, assign), assign.logits, beta, regularizer)
    return l_cluster, l_reg, l_cluster + beta * l_reg


def loss_gradient(cloud: PointCloud, assign: SoftAssignment, beta: float,
                  regularizer: str = "columns") -> np.ndarray:
    """d total / d logits, through the row softmax."""
    return _objective(_checked(cloud, assign), assign.logits, beta, regularizer)[2]


def scene_radius(points: np.ndarray) -> float:
    centered = points - points.mean(axis=0)
    return max(float(np.sqrt(np.mean(np.sum(centered * centered, axis=1)))), 1e-12)


def normal_features(cloud: PointCloud) -> np.ndarray:
    """Per point: the oriented normal and a bias.

    Walls facing the same way have a zero pair term, so they share a row here and come
    apart later, when perimeter.peel_clusters splits each label into lines.
    """
    return np.column_stack([cloud.normals, np.ones(len(cloud))])


def optimize_assignment(cloud: PointCloud, params: ClusterParams) -> SoftAssignment:
    """Adam on a linear head over normal features; logits = features @ weights."""
    if cloud.normals is None:
        raise MissingNormalsError("clustering needs oriented normals")
    n = len(cloud)
    if n < 2:
        raise TooFewPointsError("clustering needs at least 2 points")
    pairs = pair_matrix(cloud.points, cloud.normals)
    features = normal_features(cloud)
    rng = np.random.default_rng(params.seed)
    weights = rng.normal(0.0, 0.1, (features.shape[1], params.k + 1))
    beta = params.beta * scene_radius(cloud.points) if params.beta_scaling == "scene" else params.beta
    b1, b2 = ADAM_BETAS
    m = np.zeros_like(weights)
    v = np.zeros_like(weights)
    for step in range(1, params.iters + 1):
        l_cluster, l_reg, grad = _objective(pairs, features @ weights, beta, params.regularizer)
        grad = features.T @ grad
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad * grad
        weights = weights - params.lr * (m / (1 - b1 ** step)) / (np.sqrt(v / (1 - b2 ** step)) + ADAM_EPS)
        if step % 100 == 0:
            logger.debug("step %d: cluster=%.6g reg=%.6g", step, l_cluster, l_reg)
    return SoftAssignment(logits=features @ weights)


def extract_labels(assign: SoftAssignment, min_cluster_points: int = 20) -> np.ndarray:
    """Row argmax; the reject column and undersized clusters become NOISE."""
    labels = np.argmax(assign.probs, axis=1).astype(np.int64)
    labels[labels == assign.k] = NOISE
    ids, counts = np.unique(labels[labels != NOISE], return_counts=True)
    small = ids[counts < min_cluster_points]
    labels[np.isin(labels, small)] = NOISE
    return labels


def fit_plane(points: np.ndarray) -> Tuple[np.ndarray, float]:
    """Least-squares plane: unit normal (minor scatter eigenvector) and offset."""
    centroid = points.mean(axis=0)
    centered = points - centroid
    _, vectors = np.linalg.eigh(centered.T @ centered)
    normal = vectors[:, 0]
    return normal, float(normal @ centroid)


def _refit_inliers(points: np.ndarray, inliers: np.ndarray, inlier_tol: float, min_inliers: int) -> np.ndarray:
    """Refit the plane to its inliers and tighten the band to 3 robust sigmas, never past inlier_tol."""
    for _ in range(RANSAC_REFITS):
        normal, offset = fit_plane(points[inliers])
        res = np.abs(points @ normal - offset)
        tol = min(inlier_tol, max(3.0 * 1.4826 * float(np.median(res[inliers])), 1e-9))
        refined = res <= tol
        if refined.sum() < max(3, min_inliers) or np.array_equal(refined, inliers):
            break
        inliers = refined
    return inliers


def ransac_planes(cloud: PointCloud, inlier_tol: float = 0.08, min_inliers: int = 30, max_planes: int = 16,
                  seed=0, iterations: int = 500, max_tilt_deg: float = 10.0) -> np.ndarray:
    """Sequential RANSAC over vertical planes; unclaimed points stay NOISE."""
    if len(cloud) < 3:
        raise TooFewPointsError("RANSAC needs at least 3 points")
    rng = np.random.default_rng(seed)
    points = cloud.points
    labels = np.full(len(points), NOISE, dtype=np.int64)
    remaining = np.arange(len(points))
    max_nz = math.sin(math.radians(max_tilt_deg))
    for plane in range(max_planes):
        if len(remaining) < max(3, min_inliers):
            break
        pts = points[remaining]
        best: Optional[Tuple[int, np.ndarray, float]] = None
        for start in range(0, iterations, RANSAC_BATCH):
            size = min(RANSAC_BATCH, iterations - start)
            sample = pts[rng.integers(len(pts), size=(size, 3))]
            normals = np.cross(sample[:, 1] - sample[:, 0], sample[:, 2] - sample[:, 0])
            norms = np.linalg.norm(normals, axis=1)
            ok = norms > 1e-12
            normals = normals[ok] / norms[ok, None]
            offsets = np.einsum("ni,ni->n", normals, sample[ok, 0])
            vertical = np.abs(normals[:, 2]) <= max_nz
            normals, offsets = normals[vertical], offsets[vertical]
            if not len(normals):
                continue
            counts = np.sum(np.abs(pts @ normals.T - offsets) <= inlier_tol, axis=0)
            top = int(np.argmax(counts))
            if best is None or counts[top] > best[0]:
                best = (int(counts[top]), normals[top], float(offsets[top]))
        if best is None or best[0] < min_inliers:
            break
        inliers = _refit_inliers(pts, np.abs(pts @ best[1] - best[2]) <= inlier_tol, inlier_tol, min_inliers)
        labels[remaining[inliers]] = plane
        remaining = remaining[~inliers]
        logger.debug("plane %d claimed %d points", plane, inliers.sum())
    return labels
