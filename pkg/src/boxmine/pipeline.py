"""Scene-level orchestration: proposals -> subsets -> mining -> instances -> NMS."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import logit

from .consistency import BoxProposal
from .errors import ConfigurationError, DegenerateSubsetError
from .geometry import Aabb, points_in_box
from .mining import MiningConfig, PointSubset, ScoreField
from .optimize import MiningProblem, ScheduleConfig, minimize
from .refine import InstanceCandidate, OccupancyStats, binary_topk_labels

log = logging.getLogger(__name__)

PROPOSAL_TAGS = ("ground-truth", "jittered", "external-file")


@dataclass(frozen=True)
class PipelineConfig:
    score_inside: float = 0.7
    score_outside: float = 0.1
    appearance_prior: bool = True
    prior_neighbors: int = 20
    nms_threshold: float = 0.25
    jitter_scale: float = 0.1
    jitter_shift: float = 0.05

    def __post_init__(self):
        if not (0.0 < self.score_outside < self.score_inside < 1.0):
            raise ConfigurationError("need 0 < score_outside < score_inside < 1")
        if not (0.0 < self.nms_threshold < 1.0):
            raise ConfigurationError("nms_threshold must lie in (0, 1)")
        if self.prior_neighbors < 1:
            raise ConfigurationError("prior_neighbors must be at least 1")
        if not (0.0 <= self.jitter_scale < 1.0) or self.jitter_shift < 0:
            raise ConfigurationError("jitter amplitudes out of range")


@dataclass(frozen=True)
class ProposalSource:
    tag: str = "ground-truth"
    seed: int = 0

    def __post_init__(self):
        if self.tag not in PROPOSAL_TAGS:
            raise ConfigurationError(f"unknown proposal source {self.tag!r}")


@dataclass
class MineResult:
    instances: list
    candidates: list
    report: object
    stats: OccupancyStats
    score_field: ScoreField | None = None
    subsets: list = field(default_factory=list)


def jitter_box(box, rng, scale=0.1, shift=0.05):
    """Scale each axis by U[1-scale, 1+scale] about the center, then shift by U[-shift, shift]."""
    factors = rng.uniform(1.0 - scale, 1.0 + scale, size=3)
    offset = rng.uniform(-shift, shift, size=3)
    center = box.center + offset
    half = box.extent * factors / 2.0
    return Aabb(center - half, center + half)


def make_proposals(scene, source, cfg=None):
    """Proposals for a loaded scene according to ``source``."""
    cfg = cfg or PipelineConfig()
    C = scene.num_classes
    if source.tag == "external-file":
        return list(scene.proposals)
    rng = np.random.default_rng(source.seed)
    out = []
    for inst in scene.instances:
        box = inst.box
        if source.tag == "jittered":
            box = jitter_box(box, rng, cfg.jitter_scale, cfg.jitter_shift)
        out.append(BoxProposal.one_hot(box, inst.class_id, C))
    return out


def build_subsets(cloud, proposals):
    """In-box indexing; empty boxes are dropped with a warning."""
    subsets = []
    for pid, prop in enumerate(proposals):
        idx = points_in_box(cloud, prop.box)
        if idx.size == 0:
            log.warning("proposal %d contains no points; skipped", pid)
            continue
        subsets.append(PointSubset(pid, prop.class_id, idx))
    return subsets


def appearance_ratios(cloud, subsets, num_classes, k=20):
    """For each subset, the share of each member's appearance neighbours that
    fall inside some proposal of the subset's class.

    Appearance is color plus normal; position is deliberately left out so that
    look-alike points anywhere in the scene vote.
    """
    n = len(cloud)
    inside = np.zeros((n, num_classes), dtype=bool)
    for s in subsets:
        inside[s.global_indices, s.class_id] = True
    k = min(k, n - 1)
    if k < 1:
        return [np.ones(s.size) for s in subsets]
    feats = np.hstack([cloud.colors, cloud.normals])
    tree = cKDTree(feats)
    members = np.unique(np.concatenate([s.global_indices for s in subsets]))
    _, nbrs = tree.query(feats[members], k=k + 1)
    # drop self (or an exact duplicate standing in for it)
    nbrs = np.where(nbrs[:, :1] == members[:, None], nbrs[:, 1:], nbrs[:, :-1])
    row_of = np.full(n, -1, dtype=np.int64)
    row_of[members] = np.arange(members.size)
    out = []
    for s in subsets:
        votes = inside[nbrs[row_of[s.global_indices]], s.class_id]
        out.append(votes.mean(axis=1))
    return out


def initialize_field(cloud, proposals, num_classes, cfg=None, subsets=None):
    """Logits giving ``score_inside`` on C_i inside proposal i, ``score_outside`` elsewhere.

    Overlaps take the elementwise maximum.  With ``cfg.appearance_prior`` the
    inside score is interpolated toward ``score_outside`` by the appearance
    vote of :func:`appearance_ratios`.
    """
    cfg = cfg or PipelineConfig(appearance_prior=False)
    scores = np.full((len(cloud), num_classes), cfg.score_outside)
    if subsets is None:
        subsets = build_subsets(cloud, proposals)
    if cfg.appearance_prior and subsets:
        ratios = appearance_ratios(cloud, subsets, num_classes, cfg.prior_neighbors)
    else:
        ratios = [np.ones(s.size) for s in subsets]
    span = cfg.score_inside - cfg.score_outside
    for s, ratio in zip(subsets, ratios):
        rows, c = s.global_indices, s.class_id
        scores[rows, c] = np.maximum(scores[rows, c], cfg.score_outside + span * ratio)
    return ScoreField(logit(scores))


def extract_instance(field, subset, stats, class_prob):
    """Foreground of one subset: its occupancy top-k set, or the soft-label
    mask for classes without statistics."""
    s = field.scores[subset.global_indices, subset.class_id]
    peak = s.max()
    if not peak > 0:
        raise DegenerateSubsetError(f"proposal {subset.proposal_id} has an all-zero channel")
    sprime = s / peak
    labels = binary_topk_labels(sprime, subset, stats)
    if labels is None:
        labels = (sprime >= 0.5).astype(float)
    chosen = labels > 0.5
    confidence = float(np.mean(sprime[chosen])) * float(class_prob)
    return InstanceCandidate(subset.proposal_id, subset.class_id,
                             subset.global_indices[chosen], confidence)


def _iou_sorted(a, b):
    inter = np.intersect1d(a, b, assume_unique=True).size
    return inter / (a.size + b.size - inter)


def nms(candidates, iou_threshold=0.25):
    """Class-wise greedy NMS on mask IoU, highest confidence first."""
    if not (0.0 < iou_threshold < 1.0):
        raise ConfigurationError("iou_threshold must lie in (0, 1)")
    order = sorted(candidates, key=lambda c: (-c.confidence, c.proposal_id))
    kept = []
    for cand in order:
        if all(k.class_id != cand.class_id
               or _iou_sorted(k.point_indices, cand.point_indices) < iou_threshold
               for k in kept):
            kept.append(cand)
    return kept


def mine_scene(cloud, proposals, num_classes, mining_cfg=None, schedule_cfg=None,
               pipeline_cfg=None, stats=None):
    """Full flow for one scene; returns a :class:`MineResult`."""
    mining_cfg = mining_cfg or MiningConfig()
    schedule_cfg = schedule_cfg or ScheduleConfig()
    pipeline_cfg = pipeline_cfg or PipelineConfig()
    if not proposals:
        log.warning("scene has no proposals; nothing to mine")
        return MineResult([], [], None, OccupancyStats())
    subsets = build_subsets(cloud, proposals)
    if not subsets:
        return MineResult([], [], None, OccupancyStats())
    field0 = initialize_field(cloud, proposals, num_classes, pipeline_cfg, subsets)
    problem = MiningProblem(cloud, subsets, num_classes, mining_cfg)
    field1, report, stats = minimize(field0, problem, schedule_cfg, stats=stats)
    candidates = []
    for s in subsets:
        prob = proposals[s.proposal_id].class_probs[s.class_id]
        try:
            candidates.append(extract_instance(field1, s, stats, prob))
        except DegenerateSubsetError as exc:
            log.warning("skipping proposal %d: %s", s.proposal_id, exc)
    instances = nms(candidates, pipeline_cfg.nms_threshold)
    instances.sort(key=lambda c: c.proposal_id)
    return MineResult(instances, candidates, report, stats, field1, subsets)
