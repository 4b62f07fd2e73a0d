"""Perimeter metrics (2D IoU, corner error, spurious corners) and clustering agreement."""

import logging
from typing import List, Tuple

import numpy as np
from matplotlib.path import Path
from scipy.spatial.distance import cdist

from .errors import DegeneratePolygonError, EmptyPerimeterError, LengthMismatchError
from .models import NOISE, EvalReport, Perimeter

logger = logging.getLogger(__name__)


def _check_polygon(p: Perimeter, name: str) -> None:
    if abs(p.area) <= 1e-12 or not p.is_simple():
        raise DegeneratePolygonError(f"{name} polygon is degenerate or self-intersecting")


def iou_2d(pred: Perimeter, gt: Perimeter, resolution: float = 0.01) -> float:
    """Area IoU from cell-centre point-in-polygon tests over the union bounding box."""
    _check_polygon(pred, "predicted")
    _check_polygon(gt, "ground-truth")
    both = np.vstack([pred.corners, gt.corners])
    lo, hi = both.min(axis=0), both.max(axis=0)
    nx, ny = (np.ceil((hi - lo) / resolution).astype(int) + 1)
    xs = lo[0] + (np.arange(nx) + 0.5) * resolution
    ys = lo[1] + (np.arange(ny) + 0.5) * resolution
    grid = np.stack(np.meshgrid(xs, ys), axis=-1).reshape(-1, 2)
    inside_pred = Path(pred.corners).contains_points(grid)
    inside_gt = Path(gt.corners).contains_points(grid)
    union = np.count_nonzero(inside_pred | inside_gt)
    return float(np.count_nonzero(inside_pred & inside_gt) / union) if union else 0.0


def corner_error(pred: Perimeter, gt: Perimeter) -> float:
    """Mean distance from each ground-truth corner to its closest predicted corner."""
    if not len(pred.corners) or not len(gt.corners):
        raise EmptyPerimeterError("corner error needs corners on both sides")
    return float(cdist(gt.corners, pred.corners).min(axis=1).mean())


def match_corners(pred: Perimeter, gt: Perimeter, tau_match: float) -> List[Tuple[int, int, float]]:
    """Greedy one-to-one matching by ascending distance, pairs closer than tau_match."""
    dist = cdist(pred.corners, gt.corners)
    order = np.argsort(dist, axis=None, kind="stable")
    used_pred, used_gt, matches = set(), set(), []
    for flat in order:
        i, j = np.unravel_index(flat, dist.shape)
        if dist[i, j] >= tau_match:
            break
        if i in used_pred or j in used_gt:
            continue
        used_pred.add(i)
        used_gt.add(j)
        matches.append((int(i), int(j), float(dist[i, j])))
    return matches


def spurious_corners(pred: Perimeter, gt: Perimeter, tau_match: float = 0.5) -> float:
    """Unmatched predicted corners as a fraction of the ground-truth corner count."""
    unmatched = len(pred.corners) - len(match_corners(pred, gt, tau_match))
    return unmatched / len(gt.corners)


def pairwise_agreement(labels_a, labels_b, sample_pairs: int = 200_000, seed=0) -> float:
    """Fraction of point pairs on which the same/different-cluster relation agrees.

    Points labeled NOISE in either labeling are left out.
    """
    a, b = np.asarray(labels_a), np.asarray(labels_b)
    if len(a) != len(b):
        raise LengthMismatchError(f"labelings have lengths {len(a)} and {len(b)}")
    keep = (a != NOISE) & (b != NOISE)
    a, b = a[keep], b[keep]
    n = len(a)
    if n < 2:
        return 1.0
    if n * (n - 1) // 2 <= sample_pairs:
        i, j = np.triu_indices(n, k=1)
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(n, size=sample_pairs)
        j = (i + rng.integers(1, n, size=sample_pairs)) % n
    return float(np.mean((a[i] == a[j]) == (b[i] == b[j])))


def evaluate(pred: Perimeter, gt: Perimeter, tau_match: float = 0.5, resolution: float = 0.01) -> EvalReport:
    matches = match_corners(pred, gt, tau_match)
    report = EvalReport(
        iou2d=iou_2d(pred, gt, resolution),
        corner_error=corner_error(pred, gt),
        spurious_fraction=(len(pred.corners) - len(matches)) / len(gt.corners),
        matched_corners=len(matches),
    )
    logger.debug("evaluation: %s", report)
    return report
