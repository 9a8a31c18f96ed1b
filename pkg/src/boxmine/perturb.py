"""Random jitter / flip / rotation perturbations for clouds and boxes.

Points are row vectors and transform as ``p' = p @ M``.  ``M`` is built as
identity plus jitter, then the (0, 0) entry is multiplied by the flip sign,
then the result is right-multiplied by the z-axis rotation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .geometry import Aabb, PointCloud

DEFAULT_JITTER = 0.02


@dataclass(frozen=True, eq=False)
class PerturbationSpec:
    jitter_noise: np.ndarray
    flip_sign: int
    theta: float

    def __post_init__(self):
        j = np.asarray(self.jitter_noise, dtype=np.float64)
        if j.shape != (3, 3) or not np.all(np.isfinite(j)):
            raise InvalidInputError("jitter_noise must be a finite 3x3 matrix")
        if self.flip_sign not in (1, -1):
            raise InvalidInputError(f"flip_sign must be +1 or -1, got {self.flip_sign}")
        if not (0.0 <= self.theta < 2.0 * math.pi):
            raise InvalidInputError(f"theta must lie in [0, 2pi), got {self.theta}")
        object.__setattr__(self, "jitter_noise", j)
        object.__setattr__(self, "flip_sign", int(self.flip_sign))
        object.__setattr__(self, "theta", float(self.theta))

    def to_record(self):
        """One-line text record: theta, flip sign, then 9 jitter entries row-major."""
        values = [repr(self.theta), str(self.flip_sign)]
        values += [repr(float(v)) for v in self.jitter_noise.ravel()]
        return " ".join(values)

    @classmethod
    def from_record(cls, text):
        parts = text.split()
        if len(parts) != 11:
            raise InvalidInputError(f"perturbation record needs 11 fields, got {len(parts)}")
        theta = float(parts[0])
        flip = int(parts[1])
        jitter = np.array([float(v) for v in parts[2:]]).reshape(3, 3)
        return cls(jitter, flip, theta)


def sample_perturbation(rng, jitter_amplitude=DEFAULT_JITTER):
    """Draw jitter ~ U[-a, a]^(3x3), a fair flip sign and theta = 2*pi*delta."""
    jitter = rng.uniform(-jitter_amplitude, jitter_amplitude, size=(3, 3)) + 0.0
    flip = 1 if rng.random() < 0.5 else -1
    theta = 2.0 * math.pi * rng.random()
    return PerturbationSpec(jitter, flip, theta)


def rotation_matrix(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def _orthogonal_part(spec):
    m = np.eye(3)
    m[0, 0] *= spec.flip_sign
    return m @ rotation_matrix(spec.theta)


def compose_perturbation(spec):
    m = np.eye(3) + spec.jitter_noise
    m[0, 0] *= spec.flip_sign
    return m @ rotation_matrix(spec.theta)


def apply_to_points(m, cloud, spec=None):
    """Transform positions by ``m``; normals by the flip/rotation part only.

    The orthogonal part is taken from ``spec`` when given.  Otherwise it is
    recovered from ``m`` by polar decomposition, which is exact whenever the
    jitter is zero.
    """
    m = np.asarray(m, dtype=np.float64)
    if spec is not None:
        q = _orthogonal_part(spec)
    else:
        u, _, vt = np.linalg.svd(m)
        q = u @ vt
    normals = cloud.normals @ q
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(cloud.positions @ m, cloud.colors.copy(), normals)


def apply_to_box(m, box):
    """Tight axis-aligned box around the 8 transformed vertices."""
    moved = box.vertices() @ np.asarray(m, dtype=np.float64)
    return Aabb(moved.min(axis=0), moved.max(axis=0))
