import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from perimkit.cluster import (estimate_normals, extract_labels, fit_plane, loss, loss_gradient, normal_features,
                              optimize_assignment, pair_matrix, pair_term, ransac_planes)
from perimkit.config import ClusterParams, SynthConfig
from perimkit.errors import DimensionMismatchError, MissingNormalsError, TooFewPointsError
from perimkit.metrics import pairwise_agreement
from perimkit.models import NOISE, PointCloud, SoftAssignment
from perimkit.synthgen import rasterize_walls

vectors = arrays(np.float64, 3, elements=st.floats(min_value=-10, max_value=10, allow_nan=False))


def _facing_walls(rng, count=100, gap=4.0):
    """Two parallel walls ``gap`` apart with inward normals."""
    y = rng.uniform(0, 3, (2, count))
    z = rng.uniform(0, 2.5, (2, count))
    points = np.vstack([np.column_stack([np.zeros(count), y[0], z[0]]),
                        np.column_stack([np.full(count, gap), y[1], z[1]])])
    normals = np.vstack([np.tile([1.0, 0.0, 0.0], (count, 1)), np.tile([-1.0, 0.0, 0.0], (count, 1))])
    truth = np.repeat([0, 1], count)
    return PointCloud(points=points, normals=normals), truth


def _corner_walls(rng, count=300):
    a = np.column_stack([np.zeros(count), rng.uniform(0, 3, count), rng.uniform(0, 2.5, count)])
    b = np.column_stack([rng.uniform(0, 3, count), np.zeros(count), rng.uniform(0, 2.5, count)])
    return PointCloud(points=np.vstack([a, b]))


def _numeric_gradient(cloud, logits, beta, regularizer="columns", h=1e-5):
    grad = np.zeros_like(logits)
    for index in np.ndindex(logits.shape):
        up, down = logits.copy(), logits.copy()
        up[index] += h
        down[index] -= h
        grad[index] = (loss(cloud, SoftAssignment(logits=up), beta, regularizer)[2]
                       - loss(cloud, SoftAssignment(logits=down), beta, regularizer)[2]) / (2 * h)
    return grad


class TestPairTerm:
    def test_coincident_points(self):
        assert pair_term([1, 2, 3], [1, 0, 0], [1, 2, 3], [0, 1, 0]) == 0.0

    def test_same_plane(self):
        n = [0.0, 1.0, 0.0]
        assert pair_term([0, 2, 0], n, [5, 2, 1], n) == 0.0

    def test_opposing_walls(self):
        n = np.array([1.0, 0.0, 0.0])
        # facing each other (inward normals) the term is -2d; facing away it is +2d
        assert pair_term([0, 0, 0], n, [4, 0, 0], -n) == pytest.approx(-8.0)
        assert pair_term([0, 0, 0], -n, [4, 0, 0], n) == pytest.approx(8.0)

    @given(vectors, vectors, vectors, vectors)
    @settings(max_examples=100, deadline=None)
    def test_symmetric(self, xi, ni, xj, nj):
        assert pair_term(xi, ni, xj, nj) == pair_term(xj, nj, xi, ni)

    def test_in_plane_pairs_vanish(self, rng):
        normal = np.array([0.6, 0.8, 0.0])
        basis = np.array([[-0.8, 0.6, 0.0], [0.0, 0.0, 1.0]])
        pts = 3.0 * normal + rng.uniform(-5, 5, (50, 2)) @ basis
        d = pair_matrix(pts, np.tile(normal, (50, 1)))
        assert np.max(d) < 1e-12

    def test_matrix_matches_pair_term(self, rng):
        pts = rng.normal(size=(12, 3))
        normals = rng.normal(size=(12, 3))
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        d = pair_matrix(pts, normals)
        for i in range(12):
            for j in range(12):
                expected = 0.0 if i == j else abs(pair_term(pts[i], normals[i], pts[j], normals[j]))
                assert d[i, j] == pytest.approx(expected, abs=1e-12)


class TestLoss:
    def test_same_plane_has_no_cluster_cost(self):
        cloud = PointCloud(points=[(0, 0, 0), (0, 1, 1)], normals=[(1, 0, 0), (1, 0, 0)])
        assert loss(cloud, SoftAssignment(logits=np.zeros((2, 3))), 1.0)[0] == 0.0

    def test_uniform_probabilities_reg_term(self, rng):
        cloud = PointCloud(points=rng.normal(size=(5, 3)), normals=np.tile([0.0, 0.0, 1.0], (5, 1)))
        l_reg = loss(cloud, SoftAssignment(logits=np.zeros((5, 9))), 1.0)[1]
        assert l_reg == pytest.approx(8 * math.log(9))

    def test_any_plane_reg_term(self, rng):
        cloud = PointCloud(points=rng.normal(size=(5, 3)), normals=np.tile([0.0, 0.0, 1.0], (5, 1)))
        l_reg = loss(cloud, SoftAssignment(logits=np.zeros((5, 9))), 1.0, regularizer="any")[1]
        assert l_reg == pytest.approx(math.log(9 / 8))

    def test_any_plane_reg_ignores_the_split_between_planes(self, rng):
        cloud = PointCloud(points=rng.normal(size=(4, 3)), normals=np.tile([0.0, 0.0, 1.0], (4, 1)))
        spread = np.array([[0.0, 0.0, 0.0, -30.0]] * 4)
        peaked = np.array([[30.0, 0.0, 0.0, 0.0]] * 4)
        for logits in (spread, peaked):
            assert loss(cloud, SoftAssignment(logits=logits), 1.0, regularizer="any")[1] < 1e-9

    def test_unknown_regularizer(self, rng):
        cloud, _ = _facing_walls(rng, 5)
        with pytest.raises(ValueError):
            loss(cloud, SoftAssignment(logits=np.zeros((10, 4))), 1.0, regularizer="rows")

    def test_separated_assignments_cost_little(self):
        cloud = PointCloud(points=[(0, 0, 0), (4, 0, 0)], normals=[(1, 0, 0), (-1, 0, 0)])
        logits = np.array([[20.0, 0.0, 0.0], [0.0, 20.0, 0.0]])
        assert loss(cloud, SoftAssignment(logits=logits), 1.0)[0] < 1e-6 * 8.0

    def test_column_permutation_invariance(self, rng):
        cloud, _ = _facing_walls(rng, 10)
        logits = rng.normal(size=(20, 5))
        permuted = logits[:, [2, 0, 3, 1, 4]]
        np.testing.assert_allclose(loss(cloud, SoftAssignment(logits=logits), 0.7),
                                   loss(cloud, SoftAssignment(logits=permuted), 0.7))

    def test_shape_checks(self, rng):
        cloud, _ = _facing_walls(rng, 5)
        with pytest.raises(DimensionMismatchError):
            loss(cloud, SoftAssignment(logits=np.zeros((3, 4))), 1.0)
        with pytest.raises(MissingNormalsError):
            loss(cloud.with_normals(None), SoftAssignment(logits=np.zeros((10, 4))), 1.0)


class TestGradient:
    @pytest.mark.parametrize("regularizer", ["columns", "any"])
    def test_matches_finite_differences(self, regularizer):
        rng = np.random.default_rng(8)
        for _ in range(50):
            n, k = int(rng.integers(2, 16)), int(rng.integers(1, 5))
            normals = rng.normal(size=(n, 3))
            normals /= np.linalg.norm(normals, axis=1, keepdims=True)
            cloud = PointCloud(points=rng.uniform(-3, 3, (n, 3)), normals=normals)
            logits = rng.normal(size=(n, k + 1))
            beta = rng.uniform(0, 2)
            analytic = loss_gradient(cloud, SoftAssignment(logits=logits), beta, regularizer)
            numeric = _numeric_gradient(cloud, logits, beta, regularizer)
            error = np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(analytic)), 1e-6)
            assert error < 1e-5

    def test_single_plane_without_regulariser_is_stationary(self, rng):
        pts = np.column_stack([rng.uniform(0, 3, (20, 2)), np.zeros(20)])
        cloud = PointCloud(points=pts, normals=np.tile([0.0, 0.0, 1.0], (20, 1)))
        grad = loss_gradient(cloud, SoftAssignment(logits=rng.normal(size=(20, 4))), 0.0)
        np.testing.assert_array_equal(grad, 0.0)

    def test_mirror_symmetric_points_share_gradients(self, rng):
        cloud, _ = _facing_walls(rng, 10)
        mirrored = cloud.points.copy()
        mirrored[10:, 1:] = mirrored[:10, 1:]
        cloud = PointCloud(points=mirrored, normals=cloud.normals)
        grad = loss_gradient(cloud, SoftAssignment(logits=np.zeros((20, 4))), 1.0)
        np.testing.assert_allclose(grad[:10], grad[10:], atol=1e-12)


class TestOptimizer:
    def test_seeded(self, rng):
        cloud, _ = _facing_walls(rng, 30)
        params = ClusterParams(k=4, iters=30, seed=3)
        a, b = optimize_assignment(cloud, params), optimize_assignment(cloud, params)
        np.testing.assert_array_equal(a.logits, b.logits)

    def test_separates_facing_walls(self, rng):
        cloud, truth = _facing_walls(rng)
        labels = extract_labels(optimize_assignment(cloud, ClusterParams(seed=1)))
        assert np.mean(labels == NOISE) < 0.05
        assert len(set(labels[labels != NOISE].tolist())) == 2
        assert pairwise_agreement(labels, truth) >= 0.99

    def test_single_plane_stays_one_wall(self, rng):
        pts = np.column_stack([np.zeros(150), rng.uniform(0, 4, 150), rng.uniform(0, 2.5, 150)])
        cloud = PointCloud(points=pts, normals=np.tile([1.0, 0.0, 0.0], (150, 1)))
        labels = extract_labels(optimize_assignment(cloud, ClusterParams(seed=2)))
        assert NOISE not in labels
        assert len(set(labels.tolist())) == 1

    def test_one_label_per_rectangle_wall(self, clean_rectangle_scene):
        cloud = clean_rectangle_scene.cloud
        keep = np.sort(np.random.default_rng(9).choice(len(cloud), 400, replace=False))
        sample = PointCloud(points=cloud.points[keep], normals=cloud.normals[keep])
        labels = extract_labels(optimize_assignment(sample, ClusterParams()))
        assert np.mean(labels == NOISE) <= 0.02
        assert len(set(labels[labels != NOISE].tolist())) == 4
        assert pairwise_agreement(labels, cloud.labels[keep]) >= 0.99

    def test_labels_depend_only_on_the_normal(self, rng):
        cloud, _ = _facing_walls(rng, 50)
        logits = optimize_assignment(cloud, ClusterParams(k=4, iters=50)).logits
        np.testing.assert_allclose(logits[:50], np.tile(logits[0], (50, 1)), atol=1e-9)
        np.testing.assert_allclose(logits[50:], np.tile(logits[50], (50, 1)), atol=1e-9)

    def test_features_are_shared_by_one_orientation(self, rng):
        cloud, _ = _facing_walls(rng, 20)
        features = normal_features(cloud)
        assert features.shape == (40, 4)
        np.testing.assert_allclose(features[:20], np.tile(features[0], (20, 1)), atol=1e-12)
        assert not np.allclose(features[0], features[20])

    def test_walls_facing_the_same_way_share_a_label(self, rng):
        cloud, _ = _facing_walls(rng, 60)
        shifted = cloud.points.copy()
        shifted[60:, 0] = 2.0
        walls = PointCloud(points=np.vstack([cloud.points[:60], shifted[60:], cloud.points[60:]]),
                           normals=np.vstack([cloud.normals[:60], cloud.normals[:60], cloud.normals[60:]]))
        labels = extract_labels(optimize_assignment(walls, ClusterParams(seed=4)))
        assert len(set(labels[:120].tolist())) == 1
        assert labels[0] != labels[-1]

    def test_needs_normals(self, rng):
        with pytest.raises(MissingNormalsError):
            optimize_assignment(PointCloud(points=rng.normal(size=(5, 3))), ClusterParams())


class TestExtractLabels:
    def test_reject_column_wins(self):
        logits = np.log([[0.1, 0.2, 0.7]])
        np.testing.assert_array_equal(extract_labels(SoftAssignment(logits=logits), 0), [NOISE])

    def test_small_clusters_become_noise(self):
        logits = np.zeros((25, 3))
        logits[:5, 0] = 5.0
        logits[5:, 1] = 5.0
        labels = extract_labels(SoftAssignment(logits=logits), 20)
        np.testing.assert_array_equal(labels[:5], NOISE)
        np.testing.assert_array_equal(labels[5:], 1)

    def test_ties_take_lowest_index(self):
        logits = np.array([[0.0, 0.0, -1.0]])
        np.testing.assert_array_equal(extract_labels(SoftAssignment(logits=logits), 0), [0])


class TestNormals:
    def test_plane_normals_face_the_hint(self, rng):
        cloud = PointCloud(points=np.column_stack([rng.uniform(0, 2, (200, 2)), np.zeros(200)]))
        up = estimate_normals(cloud, 16, [1.0, 1.0, 5.0]).normals
        np.testing.assert_allclose(up, np.tile([0.0, 0.0, 1.0], (200, 1)), atol=1e-9)
        down = estimate_normals(cloud, 16, [1.0, 1.0, -5.0]).normals
        np.testing.assert_allclose(down, np.tile([0.0, 0.0, -1.0], (200, 1)), atol=1e-9)

    def test_noisy_room_normals(self, rectangle):
        config = SynthConfig(noise_sigma=0.01, points_per_m2=400.0, hole_count_range=(0, 0))
        scene = rasterize_walls(rectangle, config, np.random.default_rng(5))
        oriented = estimate_normals(scene.cloud.with_normals(None), 30, [2.5, 2.0, 1.25])
        corners = np.column_stack([np.linalg.norm(scene.cloud.xy - c, axis=1) for c in rectangle.corners])
        interior = corners.min(axis=1) > 0.4
        cosines = np.einsum("ni,ni->n", oriented.normals, scene.cloud.normals)[interior]
        assert np.mean(cosines >= math.cos(math.radians(5))) >= 0.99
        mean_0 = oriented.normals[scene.cloud.labels == 0].mean(axis=0)
        mean_2 = oriented.normals[scene.cloud.labels == 2].mean(axis=0)
        assert mean_0 @ mean_2 / np.linalg.norm(mean_0) / np.linalg.norm(mean_2) < -0.9

    def test_too_few_points(self, rng):
        with pytest.raises(TooFewPointsError):
            estimate_normals(PointCloud(points=rng.normal(size=(10, 3))), 16)


class TestRansac:
    def test_two_clean_walls(self, rng):
        labels = ransac_planes(_corner_walls(rng), inlier_tol=0.05, min_inliers=30, seed=0)
        assert set(labels.tolist()) == {0, 1}
        assert len(set(labels[:300].tolist())) <= 2

    def test_walls_are_separated(self, rng):
        cloud = _corner_walls(rng)
        labels = ransac_planes(cloud, inlier_tol=0.05, min_inliers=30, seed=0)
        away = (cloud.points[:300, 1] > 0.1)
        assert len(set(labels[:300][away].tolist())) == 1
        assert labels[:300][away][0] != labels[300:][cloud.points[300:, 0] > 0.1][0]

    def test_clean_planes_leave_corner_points_of_the_other_wall(self, rng):
        cloud = _corner_walls(rng)
        labels = ransac_planes(cloud, inlier_tol=0.08, min_inliers=30, seed=0)
        for label in (0, 1):
            pts = cloud.points[labels == label]
            assert min(np.ptp(pts[:, 0]), np.ptp(pts[:, 1])) < 1e-9
            normal, offset = fit_plane(pts)
            assert np.max(np.abs(pts @ normal - offset)) < 1e-9

    def test_noise_ball_has_no_planes(self, rng):
        cloud = PointCloud(points=rng.uniform(-1, 1, (1000, 3)))
        np.testing.assert_array_equal(ransac_planes(cloud, min_inliers=500, seed=0), NOISE)

    def test_seeded(self, rng):
        cloud = _corner_walls(rng)
        np.testing.assert_array_equal(ransac_planes(cloud, seed=4), ransac_planes(cloud, seed=4))

    def test_too_few_points(self):
        with pytest.raises(TooFewPointsError):
            ransac_planes(PointCloud(points=[(0, 0, 0), (1, 0, 0)]))
