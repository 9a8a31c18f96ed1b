"""Perturbation-consistency regularization between two proposal sets.

The first set holds the original-branch proposals mapped through the
perturbation; the second holds proposals predicted on the perturbed input.
Proposals are paired by greedy nearest-center matching, then compared by
KL divergence of class distributions and L1 distance of centers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, InvalidInputError
from .geometry import Aabb
from .perturb import apply_to_box

PROB_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class BoxProposal:
    box: Aabb
    class_probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.class_probs, dtype=np.float64).ravel()
        if p.size < 1 or np.any(p < 0) or not np.all(np.isfinite(p)):
            raise InvalidInputError("class_probs must be finite and nonnegative")
        if abs(p.sum() - 1.0) >= PROB_TOL:
            raise InvalidInputError(f"class_probs must sum to 1, got {p.sum()}")
        object.__setattr__(self, "class_probs", p)

    @property
    def class_id(self):
        return int(np.argmax(self.class_probs))

    @property
    def center(self):
        return self.box.center

    @classmethod
    def one_hot(cls, box, class_id, num_classes):
        p = np.zeros(num_classes)
        p[class_id] = 1.0
        return cls(box, p)


@dataclass(frozen=True)
class ConsistencyConfig:
    lambda_semantic: float = 1.0
    lambda_geometric: float = 1.0
    kl_epsilon: float = 1e-8

    def __post_init__(self):
        if self.lambda_semantic < 0 or self.lambda_geometric < 0:
            raise ConfigurationError("consistency weights must be nonnegative")
        if not self.kl_epsilon > 0:
            raise ConfigurationError("kl_epsilon must be positive")


class ConsistencyTerms(NamedTuple):
    total: float
    semantic: float
    geometric: float


def transform_proposals(m, proposals):
    """Map proposals through a perturbation matrix, keeping class distributions."""
    return [BoxProposal(apply_to_box(m, p.box), p.class_probs.copy()) for p in proposals]


def pair_proposals(a, b):
    """Greedy nearest-center matching; ties go to the lower (i, j) pair.

    Returns a list of ``(i, j)`` tuples ordered by match distance.
    """
    if not a or not b:
        raise ConfigurationError("both proposal lists must be nonempty")
    ca = np.array([p.center for p in a])
    cb = np.array([p.center for p in b])
    d2 = np.sum((ca[:, None, :] - cb[None, :, :]) ** 2, axis=2)
    ii, jj = np.meshgrid(np.arange(len(a)), np.arange(len(b)), indexing="ij")
    ii, jj, d2 = ii.ravel(), jj.ravel(), d2.ravel()
    order = np.lexsort((jj, ii, d2))
    used_a = np.zeros(len(a), dtype=bool)
    used_b = np.zeros(len(b), dtype=bool)
    pairs = []
    limit = min(len(a), len(b))
    for t in order:
        i, j = int(ii[t]), int(jj[t])
        if used_a[i] or used_b[j]:
            continue
        used_a[i] = used_b[j] = True
        pairs.append((i, j))
        if len(pairs) == limit:
            break
    return pairs


def _smoothed(p, eps):
    q = np.maximum(p, eps)
    return q / q.sum()


def semantic_consistency(pairs, a, b, eps=1e-8):
    """Mean over pairs of KL(p_a || p_b) after eps-flooring both sides."""
    if not pairs:
        return 0.0
    total = 0.0
    for i, j in pairs:
        p = _smoothed(a[i].class_probs, eps)
        q = _smoothed(b[j].class_probs, eps)
        total += float(np.sum(p * (np.log(p) - np.log(q))))
    return total / len(pairs)


def geometric_consistency(pairs, a, b):
    """Mean over pairs of the L1 distance between centers."""
    if not pairs:
        return 0.0
    total = sum(float(np.sum(np.abs(a[i].center - b[j].center))) for i, j in pairs)
    return total / len(pairs)


def consistency_loss(a, b, cfg=None):
    cfg = cfg or ConsistencyConfig()
    pairs = pair_proposals(a, b)
    sem = semantic_consistency(pairs, a, b, cfg.kl_epsilon)
    geo = geometric_consistency(pairs, a, b)
    total = cfg.lambda_semantic * sem + cfg.lambda_geometric * geo
    return ConsistencyTerms(total, sem, geo)
