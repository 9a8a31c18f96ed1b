"""Spatial primitives: point clouds, axis-aligned boxes, a uniform-grid index,
radius / kNN queries, box membership and mask/box IoU."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InvalidInputError, UndefinedIoUError

NORMAL_TOL = 1e-6


def _as_points(a, name):
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InvalidInputError(f"{name} must have shape (N, 3), got {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    """N points with position (m), color in [0, 1] and unit normal."""

    positions: np.ndarray
    colors: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        pos = _as_points(self.positions, "positions")
        col = _as_points(self.colors, "colors")
        nrm = _as_points(self.normals, "normals")
        n = pos.shape[0]
        if n < 1:
            raise InvalidInputError("a point cloud needs at least one point")
        if col.shape[0] != n or nrm.shape[0] != n:
            raise InvalidInputError("positions, colors and normals differ in length")
        if not np.all(np.isfinite(pos)):
            raise InvalidInputError("positions must be finite")
        if not (np.all(np.isfinite(col)) and np.all(np.isfinite(nrm))):
            raise InvalidInputError("colors and normals must be finite")
        norms = np.linalg.norm(nrm, axis=1)
        if np.any(np.abs(norms - 1.0) > NORMAL_TOL):
            raise InvalidInputError("every normal must have unit length")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "colors", col)
        object.__setattr__(self, "normals", nrm)

    def __len__(self):
        return self.positions.shape[0]

    def features(self):
        """(N, 9) array laid out as x y z r g b nx ny nz."""
        return np.hstack([self.positions, self.colors, self.normals])


@dataclass(frozen=True, eq=False)
class Aabb:
    """Axis-aligned box stored as two corners."""

    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max_corner, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise InvalidInputError("box corners must be finite")
        if np.any(lo > hi):
            raise InvalidInputError(f"min corner {lo} exceeds max corner {hi}")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    @classmethod
    def from_points(cls, points):
        pts = _as_points(points, "points")
        if pts.shape[0] == 0:
            raise InvalidInputError("cannot bound an empty point set")
        return cls(pts.min(axis=0), pts.max(axis=0))

    @property
    def center(self):
        return (self.min_corner + self.max_corner) / 2.0

    @property
    def extent(self):
        return self.max_corner - self.min_corner

    @property
    def volume(self):
        return float(np.prod(self.extent))

    def vertices(self):
        """The 8 corner vertices, ordered by (x, y, z) bit pattern."""
        lo, hi = self.min_corner, self.max_corner
        return np.array(
            [[(hi if bx else lo)[0], (hi if by else lo)[1], (hi if bz else lo)[2]]
             for bx, by, bz in itertools.product((0, 1), repeat=3)]
        )

    def __eq__(self, other):
        if not isinstance(other, Aabb):
            return NotImplemented
        return (np.array_equal(self.min_corner, other.min_corner)
                and np.array_equal(self.max_corner, other.max_corner))

    def __repr__(self):
        return f"Aabb(min={self.min_corner.tolist()}, max={self.max_corner.tolist()})"


@dataclass(frozen=True, eq=False)
class GridIndex:
    """Uniform grid hashing point indices by integer cell coordinate.

    Immutable after construction; every point index lives in exactly one cell
    and each cell's index array is ascending.
    """

    cell_size: float
    cells: dict = field(repr=False)
    n_points: int = 0

    def cell_of(self, point):
        return tuple(int(v) for v in np.floor(np.asarray(point) / self.cell_size))

    def gather(self, cell, ring):
        """Concatenated indices of all cells within Chebyshev distance ``ring``."""
        cx, cy, cz = cell
        found = []
        for dx in range(-ring, ring + 1):
            for dy in range(-ring, ring + 1):
                for dz in range(-ring, ring + 1):
                    members = self.cells.get((cx + dx, cy + dy, cz + dz))
                    if members is not None:
                        found.append(members)
        if not found:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(found)

    def extent_rings(self, cell):
        """Smallest ring around ``cell`` that covers every occupied cell."""
        keys = np.array(list(self.cells.keys()), dtype=np.int64)
        return int(np.max(np.abs(keys - np.asarray(cell, dtype=np.int64))))


def build_grid(cloud, cell_size):
    """Hash the cloud's positions into cubic cells of edge ``cell_size``."""
    if not (cell_size > 0 and math.isfinite(cell_size)):
        raise ConfigurationError(f"cell_size must be positive and finite, got {cell_size}")
    pos = cloud.positions if isinstance(cloud, PointCloud) else _as_points(cloud, "positions")
    if pos.shape[0] < 1:
        raise InvalidInputError("cannot index an empty cloud")
    if not np.all(np.isfinite(pos)):
        raise InvalidInputError("positions must be finite")
    keys = np.floor(pos / cell_size).astype(np.int64)
    order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
    sorted_keys = keys[order]
    change = np.any(sorted_keys[1:] != sorted_keys[:-1], axis=1)
    starts = np.concatenate([[0], np.nonzero(change)[0] + 1])
    ends = np.concatenate([starts[1:], [len(order)]])
    cells = {}
    for s, e in zip(starts, ends):
        cells[tuple(int(v) for v in sorted_keys[s])] = np.sort(order[s:e])
    return GridIndex(float(cell_size), cells, int(pos.shape[0]))


def _check_index(idx, n):
    if not (0 <= idx < n):
        raise IndexError(f"point index {idx} out of range for {n} points")


def radius_neighbors(index, cloud, center_idx, r):
    """Indices j != center with ||x_j - x_center|| < r, ascending."""
    if not r > 0:
        raise ConfigurationError(f"radius must be positive, got {r}")
    pos = cloud.positions
    _check_index(center_idx, len(pos))
    center = pos[center_idx]
    ring = int(math.ceil(r / index.cell_size))
    cand = index.gather(index.cell_of(center), ring)
    d2 = np.sum((pos[cand] - center) ** 2, axis=1)
    hit = cand[(d2 < r * r) & (cand != center_idx)]
    return np.sort(hit)


def radius_pairs(index, positions, r):
    """All ordered pairs (j, k), j != k, with ||x_j - x_k|| < r.

    Returns two int arrays sorted by (j, k).  The grid is walked cell by cell so
    the cost scales with local density rather than N².
    """
    if not r > 0:
        raise ConfigurationError(f"radius must be positive, got {r}")
    pos = _as_points(positions, "positions")
    ring = int(math.ceil(r / index.cell_size))
    rows, cols = [], []
    for cell, members in index.cells.items():
        cand = index.gather(cell, ring)
        diff = pos[members][:, None, :] - pos[cand][None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        jj, kk = np.nonzero(d2 < r * r)
        a, b = members[jj], cand[kk]
        keep = a != b
        rows.append(a[keep])
        cols.append(b[keep])
    if not rows:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    a = np.concatenate(rows)
    b = np.concatenate(cols)
    order = np.lexsort((b, a))
    return a[order], b[order]


def spatial_knn(index, cloud, center_idx, k):
    """The k Euclidean-nearest points to ``center_idx`` (self excluded).

    Ties are broken by the smaller point index.  The search grows a cube of
    cells until the k-th candidate is provably no farther than any point
    outside the cube.
    """
    pos = cloud.positions
    n = len(pos)
    _check_index(center_idx, n)
    if k < 1 or k >= n:
        raise ConfigurationError(f"k must be in [1, {n - 1}], got {k}")
    center = pos[center_idx]
    cell = index.cell_of(center)
    max_ring = index.extent_rings(cell)
    ring = 1
    while True:
        cand = index.gather(cell, ring)
        cand = cand[cand != center_idx]
        d2 = np.sum((pos[cand] - center) ** 2, axis=1)
        if len(cand) >= k:
            order = np.lexsort((cand, d2))[:k]
            reach = ring * index.cell_size
            if d2[order[-1]] <= reach * reach or ring >= max_ring:
                return cand[order]
        elif ring >= max_ring:
            raise ConfigurationError("not enough points for the requested k")
        ring += 1


def knn(disparity, a, k):
    """The k columns b != a with smallest ``disparity[a, b]``, lower index on ties."""
    D = np.asarray(disparity)
    n = D.shape[0]
    _check_index(a, n)
    if k < 1 or k >= n:
        raise ConfigurationError(f"k must satisfy 1 <= k < subset size ({n}), got {k}")
    row = D[a].astype(np.float64, copy=True)
    row[a] = np.inf
    return np.argsort(row, kind="stable")[:k]


def knn_all(disparity, k):
    """Row-wise :func:`knn` for every point; returns an (n, k) index array."""
    D = np.array(disparity, dtype=np.float64, copy=True)
    n = D.shape[0]
    if k < 1 or k >= n:
        raise ConfigurationError(f"k must satisfy 1 <= k < subset size ({n}), got {k}")
    np.fill_diagonal(D, np.inf)
    return np.argsort(D, axis=1, kind="stable")[:, :k]


def points_in_box(cloud, box):
    """Ascending global indices of points inside the closed box."""
    pos = cloud.positions if isinstance(cloud, PointCloud) else _as_points(cloud, "positions")
    inside = np.all((pos >= box.min_corner) & (pos <= box.max_corner), axis=1)
    return np.nonzero(inside)[0]


def mask_iou(a, b):
    a, b = set(int(i) for i in a), set(int(i) for i in b)
    union = len(a | b)
    if union == 0:
        raise UndefinedIoUError("IoU of two empty masks is undefined")
    return len(a & b) / union


def aabb_iou(a, b):
    lo = np.maximum(a.min_corner, b.min_corner)
    hi = np.minimum(a.max_corner, b.max_corner)
    inter = float(np.prod(np.clip(hi - lo, 0.0, None)))
    union = a.volume + b.volume - inter
    if union <= 0.0:
        raise UndefinedIoUError("IoU of zero-volume boxes is undefined")
    return inter / union
