"""Seed labeling and the mask-mining energies evaluated inside point subsets.

Each function here works on one subset (or a list of them) and mirrors one
term of the mining objective literally.  The vectorized engine in
:mod:`boxmine.optimize` evaluates the same quantities for a whole scene and is
checked against these.

Conventions shared by every term:

* ``S`` is the N x C score map, ``S = logistic(logits)``.
* ``S'`` is the score on the subset's class channel divided by its maximum
  over the subset; the maximum is a constant for differentiation.
* Soft labels, semantic similarities and graph weights are targets, never
  differentiated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit, logit

from .errors import (
    ConfigurationError,
    DegenerateGraphError,
    DegenerateSubsetError,
    InvalidInputError,
)
from .geometry import build_grid, knn_all, radius_pairs

BCE_EPS = 1e-7


@dataclass(frozen=True, eq=False)
class ScoreField:
    """Per-point class scores parameterized by logits (the single source of truth)."""

    logits: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.logits, dtype=np.float64)
        if z.ndim != 2 or not np.all(np.isfinite(z)):
            raise InvalidInputError("logits must be a finite N x C array")
        z = z.copy()
        z.setflags(write=False)
        object.__setattr__(self, "logits", z)

    @classmethod
    def from_scores(cls, scores):
        s = np.asarray(scores, dtype=np.float64)
        if np.any(s <= 0) or np.any(s >= 1):
            raise InvalidInputError("scores must lie strictly inside (0, 1)")
        return cls(logit(s))

    @property
    def scores(self):
        return expit(self.logits)

    @property
    def shape(self):
        return self.logits.shape


@dataclass(frozen=True, eq=False)
class PointSubset:
    """Global indices of the points inside one proposal, ascending."""

    proposal_id: int
    class_id: int
    global_indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.global_indices, dtype=np.int64).ravel()
        if idx.size < 1:
            raise DegenerateSubsetError(f"subset of proposal {self.proposal_id} is empty")
        if np.any(idx < 0) or np.any(np.diff(idx) <= 0):
            raise InvalidInputError("subset indices must be nonnegative, unique and ascending")
        object.__setattr__(self, "global_indices", idx)

    @property
    def size(self):
        return int(self.global_indices.size)


@dataclass(frozen=True)
class MiningConfig:
    delta_low: float = 0.3
    delta_high: float = 0.7
    radius_r: float = 0.03
    sigma: float = 1000.0
    theta1: float = 1000.0
    theta2: float = 1000.0
    theta3: float = 1000.0
    k_neighbors: int = 10

    def __post_init__(self):
        if not (0.0 < self.delta_low < self.delta_high < 1.0):
            raise ConfigurationError("thresholds must satisfy 0 < delta_low < delta_high < 1")
        if not self.radius_r > 0:
            raise ConfigurationError("radius_r must be positive")
        if min(self.sigma, self.theta1, self.theta2, self.theta3) <= 0:
            raise ConfigurationError("bandwidths must be positive")
        if self.k_neighbors < 1:
            raise ConfigurationError("k_neighbors must be at least 1")


class SeedLabels(NamedTuple):
    labels: np.ndarray
    discriminative: np.ndarray


class Similarity(NamedTuple):
    """Sparse ss_jk over one subset; ``j`` and ``k`` are local indices."""

    j: np.ndarray
    k: np.ndarray
    values: np.ndarray
    n_discriminative: int


class AffinityGraph(NamedTuple):
    """kNN property graph over one subset; ``a`` and ``b`` are local indices."""

    a: np.ndarray
    b: np.ndarray
    weights: np.ndarray

    @property
    def w_count(self):
        return int(np.count_nonzero(self.weights))


def normalize_scores(field, subset):
    s = field.scores[subset.global_indices, subset.class_id]
    peak = s.max()
    if not peak > 0:
        raise DegenerateSubsetError(
            f"class channel {subset.class_id} is all zero on proposal {subset.proposal_id}")
    return s / peak


def seed_labels_from(sprime, argmax_is_class, delta_low, delta_high):
    """Vectorized soft-label rule on precomputed S' and argmax flags."""
    sprime = np.asarray(sprime, dtype=np.float64)
    labels = np.clip((sprime - delta_low) / (delta_high - delta_low), 0.0, 1.0)
    labels[~argmax_is_class & (sprime < delta_low)] = 0.0
    discriminative = argmax_is_class & (sprime > delta_high)
    labels[discriminative] = 1.0
    return SeedLabels(labels, discriminative)


def soft_seed_labels(sprime, field, subset, cfg):
    # np.argmax returns the first maximum, i.e. ties go to the lower channel
    rows = field.scores[subset.global_indices]
    argmax_is_class = np.argmax(rows, axis=1) == subset.class_id
    return seed_labels_from(sprime, argmax_is_class, cfg.delta_low, cfg.delta_high)


def semantic_similarity(sprime, subset, cloud, cfg, discriminative, index=None):
    """ss_jk = exp(-(S'_j - S'_k)^2 / sigma) for k discriminative and j within r of k.

    Self pairs contribute nothing to the propagation loss and are left out.
    """
    disc = np.asarray(discriminative, dtype=bool)
    n_disc = int(disc.sum())
    empty = np.empty(0, dtype=np.int64)
    if n_disc == 0 or subset.size < 2:
        return Similarity(empty, empty, np.empty(0), n_disc)
    pos = cloud.positions[subset.global_indices]
    if index is None:
        index = build_grid(pos, cfg.radius_r)
    j, k = radius_pairs(index, pos, cfg.radius_r)
    keep = disc[k]
    j, k = j[keep], k[keep]
    values = np.exp(-((sprime[j] - sprime[k]) ** 2) / cfg.sigma)
    return Similarity(j, k, values, n_disc)


def _bce(labels, sprime, eps=BCE_EPS):
    return -(labels * np.log(np.maximum(sprime, eps))
             + (1.0 - labels) * np.log(np.maximum(1.0 - sprime, eps)))


def seed_loss(sprimes, labels, eps=BCE_EPS):
    """Mean over subsets of the mean per-point binary cross-entropy.

    ``sprimes`` and ``labels`` are parallel lists, one array per subset.
    """
    if not sprimes:
        return 0.0
    total = sum(float(np.mean(_bce(np.asarray(l), np.asarray(s), eps)))
                for s, l in zip(sprimes, labels))
    return total / len(sprimes)


def propagation_loss(sprimes, sims):
    """(1/K) sum_i 1/(N_i' N_i) sum_k sum_j ss_jk (S'_j - S'_k)^2."""
    if not sprimes:
        return 0.0
    total = 0.0
    for s, sim in zip(sprimes, sims):
        if sim.n_discriminative == 0 or sim.values.size == 0:
            continue
        gap = s[sim.j] - s[sim.k]
        total += float(np.sum(sim.values * gap * gap)) / (sim.n_discriminative * len(s))
    return total / len(sprimes)


def property_disparity(cloud, subset):
    if subset.size < 2:
        raise DegenerateSubsetError("property disparity needs at least two points")
    idx = subset.global_indices
    D = np.zeros((subset.size, subset.size))
    for channel in (cloud.positions, cloud.colors, cloud.normals):
        x = channel[idx]
        diff = x[:, None, :] - x[None, :, :]
        D += np.einsum("ijk,ijk->ij", diff, diff)
    return D


def property_weights(cloud, subset, disparity, cfg, k=None):
    """Gaussian property affinities on the kNN graph of the disparity matrix."""
    k = cfg.k_neighbors if k is None else k
    nbrs = knn_all(disparity, k)
    n = subset.size
    a = np.repeat(np.arange(n), k)
    b = nbrs.ravel()
    idx = subset.global_indices
    exponent = np.zeros(a.size)
    for channel, theta in ((cloud.positions, cfg.theta1),
                           (cloud.colors, cfg.theta2),
                           (cloud.normals, cfg.theta3)):
        x = channel[idx]
        exponent -= np.sum((x[a] - x[b]) ** 2, axis=1) / theta
    return AffinityGraph(a, b, np.exp(exponent))


def property_loss(field, graphs, subsets):
    """(1/K) sum_i (1/w_N,i) sum_ab w_ab ||S_a - S_b||^2 on full score rows."""
    if not subsets:
        return 0.0
    scores = field.scores
    total = 0.0
    for graph, subset in zip(graphs, subsets):
        if graph is None:
            continue
        if graph.w_count == 0:
            raise DegenerateGraphError(
                f"affinity graph of proposal {subset.proposal_id} has no nonzero weight")
        rows = scores[subset.global_indices]
        diff = rows[graph.a] - rows[graph.b]
        total += float(np.sum(graph.weights * np.sum(diff * diff, axis=1))) / graph.w_count
    return total / len(subsets)
