import math

import numpy as np
import pytest

from boxmine.errors import DegenerateGraphError, DegenerateSubsetError, InvalidInputError
from boxmine.mining import (AffinityGraph, MiningConfig, PointSubset, ScoreField, Similarity,
                            normalize_scores, property_disparity, property_loss, property_weights,
                            propagation_loss, seed_loss, semantic_similarity, soft_seed_labels)

from conftest import make_cloud, random_cloud

CFG = MiningConfig()


def subset(n, cls=0, pid=0):
    return PointSubset(pid, cls, np.arange(n))


class TestNormalize:
    def test_uniform(self):
        f = ScoreField.from_scores(np.full((3, 2), 0.4))
        np.testing.assert_allclose(normalize_scores(f, subset(3)), 1.0)

    def test_two_points(self):
        f = ScoreField.from_scores([[0.2, 0.1], [0.4, 0.1]])
        np.testing.assert_allclose(normalize_scores(f, subset(2)), [0.5, 1.0])

    def test_single_point(self):
        f = ScoreField.from_scores([[0.3]])
        np.testing.assert_allclose(normalize_scores(f, subset(1)), [1.0])

    def test_all_zero_channel(self):
        f = ScoreField(np.full((2, 1), -800.0))
        with pytest.raises(DegenerateSubsetError):
            normalize_scores(f, subset(2))


class TestSubset:
    def test_empty(self):
        with pytest.raises(DegenerateSubsetError):
            PointSubset(0, 0, [])

    def test_unsorted(self):
        with pytest.raises(InvalidInputError):
            PointSubset(0, 0, [2, 1])


class TestSeedLabels:
    def labels(self, sprime, argmax_class):
        # channel 0 is the subset class; channel 1 wins the argmax when requested
        rows = [[0.5, 0.1] if a else [0.1, 0.5] for a in argmax_class]
        f = ScoreField.from_scores(rows)
        return soft_seed_labels(np.array(sprime), f, subset(len(sprime)), CFG)

    def test_discriminative(self):
        out = self.labels([0.9], [True])
        assert out.labels[0] == 1.0 and out.discriminative[0]

    def test_ramp(self):
        out = self.labels([0.5], [False])
        assert out.labels[0] == pytest.approx(0.5)
        assert not out.discriminative[0]

    def test_clamp(self):
        out = self.labels([0.9], [False])
        assert out.labels[0] == 1.0 and not out.discriminative[0]

    def test_low(self):
        assert self.labels([0.1], [False]).labels[0] == 0.0
        assert self.labels([0.1], [True]).labels[0] == 0.0


class TestSimilarity:
    def test_equal_scores_in_radius(self):
        cloud = make_cloud([[0, 0, 0], [0.01, 0, 0]])
        sim = semantic_similarity(np.array([1.0, 1.0]), subset(2), cloud, CFG, [True, True])
        np.testing.assert_allclose(sim.values, 1.0)

    def test_far_pair_absent(self):
        cloud = make_cloud([[0, 0, 0], [0.5, 0, 0]])
        sim = semantic_similarity(np.array([1.0, 0.2]), subset(2), cloud, CFG, [True, False])
        assert sim.values.size == 0

    def test_gap_one(self):
        cloud = make_cloud([[0, 0, 0], [0.01, 0, 0]])
        sim = semantic_similarity(np.array([1.0, 0.0]), subset(2), cloud, CFG, [True, False])
        assert sim.j.tolist() == [1] and sim.k.tolist() == [0]
        assert sim.values[0] == pytest.approx(math.exp(-0.001), abs=1e-15)


class TestSeedLoss:
    def test_perfect(self):
        assert seed_loss([np.ones(3)], [np.ones(3)]) < 1e-12

    def test_half(self):
        assert seed_loss([np.array([0.5])], [np.array([1.0])]) == pytest.approx(math.log(2))

    def test_max_entropy(self):
        assert seed_loss([np.array([0.5])], [np.array([0.5])]) == pytest.approx(math.log(2))

    def test_normalizers(self):
        # two subsets: means 0 and ln 2, then averaged over K=2
        got = seed_loss([np.ones(2), np.full(4, 0.5)], [np.ones(2), np.ones(4)])
        assert got == pytest.approx(math.log(2) / 2, abs=1e-6)


class TestPropagation:
    def test_uniform(self):
        sim = Similarity(np.array([1]), np.array([0]), np.array([1.0]), 1)
        assert propagation_loss([np.array([0.8, 0.8])], [sim]) == 0.0

    def test_hand_case(self):
        sim = Similarity(np.array([1]), np.array([0]), np.array([1.0]), 1)
        assert propagation_loss([np.array([1.0, 0.5])], [sim]) == pytest.approx(0.125)

    def test_no_pairs(self):
        sim = Similarity(np.empty(0, int), np.empty(0, int), np.empty(0), 1)
        assert propagation_loss([np.array([1.0, 0.5])], [sim]) == 0.0


class TestProperty:
    def test_disparity_examples(self):
        cloud = make_cloud([[0, 0, 0], [0, 0, 0], [1, 0, 0]])
        D = property_disparity(cloud, subset(3))
        assert D[0, 1] == 0.0
        assert D[0, 2] == 1.0

    def test_disparity_symmetric(self, rng):
        cloud = random_cloud(rng, 30)
        D = property_disparity(cloud, PointSubset(0, 0, np.arange(0, 30, 2)))
        np.testing.assert_array_equal(D, D.T)

    def test_disparity_needs_two(self):
        with pytest.raises(DegenerateSubsetError):
            property_disparity(make_cloud([[0, 0, 0]]), subset(1))

    def test_weights(self):
        cloud = make_cloud([[0, 0, 0], [0, 0, 0], [1, 0, 0], [5, 0, 0]])
        s = subset(4)
        g = property_weights(cloud, s, property_disparity(cloud, s), CFG, k=1)
        w = {(int(a), int(b)): v for a, b, v in zip(g.a, g.b, g.weights)}
        assert w[(0, 1)] == 1.0
        assert w[(2, 0)] == pytest.approx(math.exp(-0.001), abs=1e-15)
        assert (0, 3) not in w

    def test_loss_hand_case(self):
        f = ScoreField.from_scores([[1 - 1e-12, 1e-12], [1e-12, 1 - 1e-12]])
        g = AffinityGraph(np.array([0, 1]), np.array([1, 0]), np.array([1.0, 1.0]))
        assert property_loss(f, [g], [subset(2)]) == pytest.approx(2.0, abs=1e-9)

    def test_loss_constant_field(self, rng):
        cloud = random_cloud(rng, 20)
        s = subset(20)
        g = property_weights(cloud, s, property_disparity(cloud, s), CFG)
        f = ScoreField.from_scores(np.full((20, 3), 0.3))
        assert property_loss(f, [g], [s]) == 0.0

    def test_zero_weights(self):
        f = ScoreField.from_scores([[0.2], [0.4]])
        g = AffinityGraph(np.array([0, 1]), np.array([1, 0]), np.zeros(2))
        with pytest.raises(DegenerateGraphError):
            property_loss(f, [g], [subset(2)])
