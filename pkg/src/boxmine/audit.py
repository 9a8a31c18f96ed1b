"""Finite-difference audit of the mining loss gradients on small random fixtures."""

from __future__ import annotations

import numpy as np

from .geometry import PointCloud
from .mining import PointSubset, ScoreField
from .optimize import TERMS, MiningProblem, finite_difference_gradient, relative_error
from .refine import OccupancyRecord, OccupancyStats


def random_fixture(rng, max_points=64, max_classes=4, max_subsets=3):
    """A compact random scene with overlapping subsets and random logits.

    Points live in a 10 cm cube so the 3 cm propagation radius finds pairs.
    Returns ``(problem, logits, stats)``.
    """
    C = int(rng.integers(2, max_classes + 1))
    K = int(rng.integers(1, max_subsets + 1))
    n = int(rng.integers(max(8, max_points // 2), max_points + 1))
    pos = rng.uniform(0.0, 0.1, size=(n, 3))
    col = rng.uniform(0.0, 1.0, size=(n, 3))
    nrm = rng.normal(size=(n, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    cloud = PointCloud(pos, col, nrm)
    logits = rng.normal(0.0, 1.5, size=(n, C))
    subsets, records = [], []
    for pid in range(K):
        size = int(rng.integers(4, min(n, max_points) + 1))
        idx = np.sort(rng.choice(n, size=size, replace=False))
        c = int(rng.integers(C))
        logits[idx, c] += 1.0
        subsets.append(PointSubset(pid, c, idx))
        records.append(OccupancyRecord(pid, c, int(rng.integers(1, size + 1)), size))
    problem = MiningProblem(cloud, subsets, C)
    return problem, logits, OccupancyStats.from_records(records)


def term_errors(problem, logits, stats, h=1e-5):
    """Max relative error of each term's analytic gradient under frozen targets."""
    targets = problem.targets(ScoreField(logits), stats)
    out = {}
    for name in TERMS:
        analytic = problem.term_gradient(logits, targets, name)
        numeric = finite_difference_gradient(
            lambda x, name=name: problem.terms(x, targets)[name], logits, h)
        out[name] = relative_error(analytic, numeric)
    return out


def gradient_audit(instances=20, max_points=64, max_classes=4, seed=0, h=1e-5):
    """Worst relative error per term over ``instances`` random fixtures."""
    rng = np.random.default_rng(seed)
    worst = dict.fromkeys(TERMS, 0.0)
    for _ in range(instances):
        problem, logits, stats = random_fixture(rng, max_points, max_classes)
        for name, err in term_errors(problem, logits, stats, h).items():
            worst[name] = max(worst[name], err)
    return worst
