import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boxmine.errors import ConfigurationError, InvalidInputError, UndefinedIoUError
from boxmine.geometry import (Aabb, PointCloud, aabb_iou, build_grid, knn, knn_all, mask_iou,
                              points_in_box, radius_neighbors, radius_pairs, spatial_knn)

from conftest import make_cloud, random_cloud


class TestPointCloud:
    def test_rejects_empty(self):
        with pytest.raises(InvalidInputError):
            PointCloud(np.empty((0, 3)), np.empty((0, 3)), np.empty((0, 3)))

    def test_rejects_non_unit_normals(self):
        with pytest.raises(InvalidInputError):
            make_cloud([[0, 0, 0]], normals=[[0, 0, 2.0]])

    def test_rejects_nan(self):
        with pytest.raises(InvalidInputError):
            make_cloud([[np.nan, 0, 0]])

    def test_rejects_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            make_cloud([[0, 0, 0], [1, 1, 1]], colors=[[0, 0, 0]])

    def test_features_layout(self):
        c = make_cloud([[1, 2, 3]], colors=[[0.1, 0.2, 0.3]])
        np.testing.assert_array_equal(c.features(), [[1, 2, 3, 0.1, 0.2, 0.3, 0, 0, 1]])


class TestGrid:
    def test_single_point(self):
        g = build_grid(make_cloud([[0, 0, 0]]), 0.1)
        assert list(g.cells) == [(0, 0, 0)]
        np.testing.assert_array_equal(g.cells[(0, 0, 0)], [0])

    def test_rejects_empty_positions(self):
        with pytest.raises(InvalidInputError):
            build_grid(np.empty((0, 3)), 0.1)

    @pytest.mark.parametrize("size", [0.0, -1.0, np.inf])
    def test_rejects_bad_cell_size(self, size):
        with pytest.raises(ConfigurationError):
            build_grid(make_cloud([[0, 0, 0]]), size)

    def test_every_point_in_exactly_one_cell(self, rng):
        cloud = random_cloud(rng, 500)
        g = build_grid(cloud, 0.07)
        allidx = np.sort(np.concatenate(list(g.cells.values())))
        np.testing.assert_array_equal(allidx, np.arange(500))
        for members in g.cells.values():
            assert np.all(np.diff(members) > 0)


class TestRadius:
    def test_close_pair_found(self):
        cloud = make_cloud([[0, 0, 0], [0.02, 0, 0]])
        g = build_grid(cloud, 0.03)
        np.testing.assert_array_equal(radius_neighbors(g, cloud, 0, 0.03), [1])

    def test_far_pair_empty(self):
        cloud = make_cloud([[0, 0, 0], [0.05, 0, 0]])
        g = build_grid(cloud, 0.03)
        assert radius_neighbors(g, cloud, 0, 0.03).size == 0

    def test_boundary_is_exclusive(self):
        cloud = make_cloud([[0, 0, 0], [0.5, 0, 0]])
        g = build_grid(cloud, 0.5)
        assert radius_neighbors(g, cloud, 0, 0.5).size == 0

    @pytest.mark.parametrize("cell", [0.03, 0.05, 0.2])
    def test_matches_brute_force(self, rng, cell):
        cloud = random_cloud(rng, 200, scale=0.3)
        g = build_grid(cloud, cell)
        d = np.linalg.norm(cloud.positions[:, None] - cloud.positions[None], axis=2)
        for i in range(0, 200, 7):
            expect = np.nonzero((d[i] < 0.05) & (np.arange(200) != i))[0]
            np.testing.assert_array_equal(radius_neighbors(g, cloud, i, 0.05), expect)

    def test_pairs_match_brute_force(self, rng):
        cloud = random_cloud(rng, 300, scale=0.4)
        g = build_grid(cloud, 0.05)
        j, k = radius_pairs(g, cloud.positions, 0.05)
        d = np.linalg.norm(cloud.positions[:, None] - cloud.positions[None], axis=2)
        ej, ek = np.nonzero((d < 0.05) & ~np.eye(300, dtype=bool))
        np.testing.assert_array_equal(j, ej)
        np.testing.assert_array_equal(k, ek)

    def test_rejects_nonpositive_radius(self):
        cloud = make_cloud([[0, 0, 0], [1, 0, 0]])
        with pytest.raises(ConfigurationError):
            radius_neighbors(build_grid(cloud, 1.0), cloud, 0, 0.0)


class TestKnn:
    def test_collinear_identical_colors(self):
        cloud = make_cloud([[0, 0, 0], [1, 0, 0], [3, 0, 0]])
        D = np.sum((cloud.positions[:, None] - cloud.positions[None]) ** 2, axis=2)
        np.testing.assert_array_equal(knn(D, 0, 1), [1])
        np.testing.assert_array_equal(spatial_knn(build_grid(cloud, 0.5), cloud, 0, 1), [1])

    def test_tie_goes_to_lower_index(self):
        D = np.array([[0, 1, 1], [1, 0, 2], [1, 2, 0]], dtype=float)
        np.testing.assert_array_equal(knn(D, 0, 1), [1])
        np.testing.assert_array_equal(knn(D, 1, 1), [0])

    def test_matches_exhaustive_sort(self, rng):
        X = rng.normal(size=(50, 9))
        D = np.sum((X[:, None] - X[None]) ** 2, axis=2)
        all_nbrs = knn_all(D, 10)
        for a in range(50):
            row = D[a].copy()
            row[a] = np.inf
            expect = sorted(range(50), key=lambda b: (row[b], b))[:10]
            np.testing.assert_array_equal(knn(D, a, 10), expect)
            np.testing.assert_array_equal(all_nbrs[a], expect)

    def test_k_out_of_range(self):
        D = np.zeros((3, 3))
        with pytest.raises(ConfigurationError):
            knn(D, 0, 3)
        with pytest.raises(ConfigurationError):
            knn_all(D, 0)

    def test_spatial_knn_with_ties(self):
        # lattice points give many exactly equal distances
        g = np.stack(np.meshgrid(*[np.arange(5) * 0.1] * 3, indexing="ij"), -1).reshape(-1, 3)
        cloud = make_cloud(g)
        index = build_grid(cloud, 0.1)
        d2 = np.sum((g[:, None] - g[None]) ** 2, axis=2)
        for c in (0, 62, 124):
            row = d2[c].copy()
            row[c] = np.inf
            expect = np.lexsort((np.arange(len(g)), row))[:7]
            np.testing.assert_array_equal(spatial_knn(index, cloud, c, 7), expect)


class TestBoxes:
    def test_center_point_inside(self):
        cloud = make_cloud([[0.5, 0.5, 0.5], [2, 2, 2]])
        np.testing.assert_array_equal(points_in_box(cloud, Aabb([0, 0, 0], [1, 1, 1])), [0])

    def test_face_point_included(self):
        cloud = make_cloud([[1.0, 0.5, 0.5], [0, 0, 0]])
        np.testing.assert_array_equal(points_in_box(cloud, Aabb([0, 0, 0], [1, 1, 1])), [0, 1])

    def test_membership_brute_force(self, rng):
        cloud = random_cloud(rng, 400)
        for _ in range(20):
            lo = rng.uniform(0, 0.6, 3)
            box = Aabb(lo, lo + rng.uniform(0.05, 0.4, 3))
            p = cloud.positions
            expect = [i for i in range(400) if all(lo[d] <= p[i, d] <= box.max_corner[d] for d in range(3))]
            np.testing.assert_array_equal(points_in_box(cloud, box), expect)

    def test_aabb_validates(self):
        with pytest.raises(InvalidInputError):
            Aabb([1, 0, 0], [0, 1, 1])

    def test_aabb_iou_examples(self):
        unit = Aabb([0, 0, 0], [1, 1, 1])
        assert aabb_iou(unit, unit) == 1.0
        assert aabb_iou(unit, Aabb([2, 2, 2], [3, 3, 3])) == 0.0
        assert aabb_iou(unit, Aabb([0.5, 0, 0], [1.5, 1, 1])) == pytest.approx(1 / 3, abs=1e-15)

    def test_aabb_iou_zero_volume(self):
        flat = Aabb([0, 0, 0], [1, 1, 0])
        with pytest.raises(UndefinedIoUError):
            aabb_iou(flat, flat)


class TestMaskIou:
    def test_examples(self):
        assert mask_iou([1, 2], [2, 1]) == 1.0
        assert mask_iou([1], [2]) == 0.0
        assert mask_iou([1, 2, 3], [2, 3, 4]) == 0.5

    def test_both_empty(self):
        with pytest.raises(UndefinedIoUError):
            mask_iou([], [])


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 80), st.floats(0.01, 0.5), st.floats(0.01, 0.5), st.integers(0, 2**32 - 1))
def test_radius_pairs_property(n, cell, r, seed):
    pos = np.random.default_rng(seed).uniform(-0.5, 0.5, (n, 3))
    j, k = radius_pairs(build_grid(pos, cell), pos, r)
    d = np.linalg.norm(pos[:, None] - pos[None], axis=2)
    ej, ek = np.nonzero((d < r) & ~np.eye(n, dtype=bool))
    np.testing.assert_array_equal(j, ej)
    np.testing.assert_array_equal(k, ek)
