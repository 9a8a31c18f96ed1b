import math

import numpy as np
import pytest

from boxmine.mining import PointSubset
from boxmine.refine import (InstanceCandidate, OccupancyRecord, OccupancyStats, binary_topk_labels,
                            occupancy_ratio, refinement_loss, topk_count)


def stats(ratio, cls=0):
    return OccupancyStats({cls: ratio}, {cls: 1})


class TestOccupancy:
    @pytest.mark.parametrize("fg,total,expect", [(10, 10, 1.0), (84, 100, 0.84), (54, 100, 0.54)])
    def test_fixtures(self, fg, total, expect):
        s = PointSubset(0, 2, np.arange(total))
        out = occupancy_ratio([InstanceCandidate(0, 2, np.arange(fg), 1.0)], [s])
        assert out.ratios == {2: pytest.approx(expect)}
        assert out.counts == {2: 1}

    def test_class_mean(self):
        subs = [PointSubset(0, 1, np.arange(10)), PointSubset(1, 1, np.arange(20, 40))]
        inst = [InstanceCandidate(0, 1, np.arange(8), 1.0), InstanceCandidate(1, 1, np.arange(20, 30), 1.0)]
        assert occupancy_ratio(inst, subs).ratios[1] == pytest.approx(0.65)

    def test_instance_points_outside_box_ignored(self):
        s = PointSubset(0, 0, np.arange(4))
        out = occupancy_ratio([InstanceCandidate(0, 0, [0, 1, 99], 1.0)], [s])
        assert out.ratios[0] == 0.5

    def test_tables(self):
        st = OccupancyStats.from_records([OccupancyRecord(0, 1, 3, 4)])
        assert st.to_csv().splitlines() == ["class_id,instances,occupancy", "1,1,0.75"]
        assert "0.7500" in st.to_text()


class TestTopk:
    def test_half(self):
        s = PointSubset(0, 0, np.arange(4))
        np.testing.assert_array_equal(binary_topk_labels([0.9, 0.8, 0.2, 0.1], s, stats(0.5)), [1, 1, 0, 0])

    def test_full(self):
        s = PointSubset(0, 0, np.arange(4))
        np.testing.assert_array_equal(binary_topk_labels([0.1, 0.8, 0.2, 0.9], s, stats(1.0)), [1] * 4)

    def test_at_least_one(self):
        s = PointSubset(0, 0, np.arange(4))
        assert topk_count(0.1, 4) == 1
        np.testing.assert_array_equal(binary_topk_labels([0.2, 0.8, 0.9, 0.1], s, stats(0.1)), [0, 0, 1, 0])

    def test_ties_lower_index(self):
        s = PointSubset(0, 0, np.array([3, 5, 9]))
        np.testing.assert_array_equal(binary_topk_labels([0.5, 0.5, 0.5], s, stats(0.34)), [1, 0, 0])

    def test_missing_class(self):
        s = PointSubset(0, 3, np.arange(4))
        assert binary_topk_labels([1, 1, 1, 1], s, stats(0.5, cls=0)) is None


class TestRefinementLoss:
    def test_near_hard(self):
        got = refinement_loss([np.array([0.999, 0.001])], [np.array([1.0, 0.0])])
        assert got == pytest.approx(-math.log(0.999), rel=1e-12)
        assert got == pytest.approx(0.001, abs=1e-6)

    def test_half(self):
        assert refinement_loss([np.array([0.5])], [np.array([1.0])]) == pytest.approx(math.log(2))
