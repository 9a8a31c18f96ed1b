import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boxmine.consistency import (BoxProposal, ConsistencyConfig, consistency_loss,
                                 geometric_consistency, pair_proposals, semantic_consistency,
                                 transform_proposals)
from boxmine.errors import ConfigurationError, InvalidInputError
from boxmine.geometry import Aabb
from boxmine.perturb import PerturbationSpec, compose_perturbation


def prop(center, probs=(1.0, 0.0), half=0.1):
    c = np.asarray(center, dtype=float)
    return BoxProposal(Aabb(c - half, c + half), np.asarray(probs, dtype=float))


def greedy_oracle(a, b):
    """Repeatedly take the globally closest unused (i, j), lowest pair on ties."""
    left_a, left_b, out = set(range(len(a))), set(range(len(b))), []
    while left_a and left_b:
        best = min(((float(np.sum((a[i].center - b[j].center) ** 2)), i, j)
                    for i in left_a for j in left_b))
        out.append((best[1], best[2]))
        left_a.discard(best[1])
        left_b.discard(best[2])
    return out


class TestPairing:
    def test_identity(self):
        a = [prop([i, 0, 0]) for i in range(4)]
        assert pair_proposals(a, a) == [(0, 0), (1, 1), (2, 2), (3, 3)]

    def test_unequal_sizes_drop_farthest(self):
        a = [prop([0, 0, 0]), prop([5, 0, 0]), prop([10, 0, 0])]
        b = [prop([0.1, 0, 0]), prop([9.9, 0, 0])]
        pairs = pair_proposals(a, b)
        assert sorted(pairs) == [(0, 0), (2, 1)]

    def test_matches_oracle(self, rng):
        for _ in range(50):
            a = [prop(c) for c in rng.integers(0, 4, (int(rng.integers(1, 7)), 3))]
            b = [prop(c) for c in rng.integers(0, 4, (int(rng.integers(1, 7)), 3))]
            assert pair_proposals(a, b) == greedy_oracle(a, b)

    def test_empty_rejected(self):
        with pytest.raises(ConfigurationError):
            pair_proposals([], [prop([0, 0, 0])])


class TestTerms:
    def test_kl_example(self):
        a, b = [prop([0, 0, 0], (1, 0))], [prop([0, 0, 0], (0.5, 0.5))]
        assert semantic_consistency([(0, 0)], a, b) == pytest.approx(math.log(2), abs=1e-6)

    def test_equal_distributions_zero(self):
        a = [prop([0, 0, 0], (0.3, 0.7))]
        assert semantic_consistency([(0, 0)], a, a) == 0.0

    def test_l1_example(self):
        a, b = [prop([0, 0, 0])], [prop([1, 2, 3])]
        assert geometric_consistency([(0, 0)], a, b) == pytest.approx(6.0, abs=1e-12)

    def test_pair_order_irrelevant(self, rng):
        a = [prop(c) for c in rng.normal(size=(5, 3))]
        b = [prop(c) for c in rng.normal(size=(5, 3))]
        pairs = [(i, (i + 2) % 5) for i in range(5)]
        assert geometric_consistency(pairs, a, b) == pytest.approx(
            geometric_consistency(pairs[::-1], a, b), abs=1e-14)

    def test_geometric_scales_linearly(self, rng):
        a = [prop(c) for c in rng.normal(size=(4, 3))]
        b = [prop(c) for c in rng.normal(size=(4, 3))]
        pairs = [(i, i) for i in range(4)]
        s = 3.0
        b2 = [prop(a[i].center + s * (b[i].center - a[i].center)) for i in range(4)]
        assert geometric_consistency(pairs, a, b2) == pytest.approx(
            s * geometric_consistency(pairs, a, b), rel=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=3, max_size=3),
           st.lists(st.floats(0, 1), min_size=3, max_size=3))
    def test_kl_nonnegative(self, p, q):
        p, q = np.array(p) + 1e-3, np.array(q) + 1e-3
        a, b = [prop([0, 0, 0], p / p.sum())], [prop([0, 0, 0], q / q.sum())]
        assert semantic_consistency([(0, 0)], a, b) >= -1e-15


class TestLoss:
    def test_hand_case(self):
        a, b = [prop([0, 0, 0], (1, 0))], [prop([1, 2, 3], (0.5, 0.5))]
        t = consistency_loss(a, b)
        assert t.total == pytest.approx(math.log(2) + 6, abs=1e-6)

    def test_lambda_zero(self):
        a, b = [prop([0, 0, 0], (1, 0))], [prop([1, 2, 3], (0.5, 0.5))]
        t = consistency_loss(a, b, ConsistencyConfig(lambda_semantic=0.0, lambda_geometric=2.0))
        assert t.total == 2.0 * t.geometric

    def test_equivariant_zero(self, rng):
        a = [prop(c, (0.2, 0.8)) for c in rng.normal(size=(6, 3))]
        m = compose_perturbation(PerturbationSpec(np.zeros((3, 3)), -1, 1.1))
        moved = transform_proposals(m, a)
        rev = list(reversed(transform_proposals(m, a)))
        assert consistency_loss(moved, moved).total == 0.0
        assert consistency_loss(moved, rev).total < 1e-9

    def test_order_invariant(self, rng):
        a = [prop(c) for c in rng.normal(size=(5, 3))]
        b = [prop(c) for c in rng.normal(size=(5, 3))]
        base = consistency_loss(a, b).total
        for perm in itertools.islice(itertools.permutations(range(5)), 20):
            assert consistency_loss([a[i] for i in perm], b).total == pytest.approx(base, abs=1e-12)

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            ConsistencyConfig(lambda_semantic=-1.0)


def test_proposal_validation():
    with pytest.raises(InvalidInputError):
        BoxProposal(Aabb([0, 0, 0], [1, 1, 1]), np.array([0.5, 0.6]))
