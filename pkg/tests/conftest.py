import numpy as np
import pytest

from boxmine.geometry import PointCloud


def make_cloud(positions, colors=None, normals=None):
    pos = np.asarray(positions, dtype=float)
    n = len(pos)
    col = np.full((n, 3), 0.5) if colors is None else np.asarray(colors, dtype=float)
    if normals is None:
        nrm = np.tile([0.0, 0.0, 1.0], (n, 1))
    else:
        nrm = np.asarray(normals, dtype=float)
    return PointCloud(pos, col, nrm)


def random_cloud(rng, n, scale=1.0):
    nrm = rng.normal(size=(n, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    return PointCloud(rng.uniform(0, scale, (n, 3)), rng.uniform(0, 1, (n, 3)), nrm)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
