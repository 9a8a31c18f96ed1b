"""Per-class occupancy ratios and the top-k binary relabeling they drive."""

from __future__ import annotations

import io
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .mining import BCE_EPS, seed_loss


@dataclass(frozen=True, eq=False)
class InstanceCandidate:
    proposal_id: int
    class_id: int
    point_indices: np.ndarray
    confidence: float

    def __post_init__(self):
        idx = np.unique(np.asarray(self.point_indices, dtype=np.int64))
        object.__setattr__(self, "point_indices", idx)
        object.__setattr__(self, "confidence", float(self.confidence))


@dataclass(frozen=True)
class OccupancyRecord:
    proposal_id: int
    class_id: int
    p_ins: int
    p_box: int

    @property
    def ratio(self):
        return self.p_ins / self.p_box


@dataclass(frozen=True)
class OccupancyStats:
    ratios: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    records: tuple = ()

    def __contains__(self, class_id):
        return class_id in self.ratios

    @classmethod
    def from_records(cls, records):
        per_class = defaultdict(list)
        for rec in records:
            per_class[rec.class_id].append(rec.ratio)
        ratios = {c: float(np.mean(v)) for c, v in sorted(per_class.items())}
        counts = {c: len(v) for c, v in sorted(per_class.items())}
        return cls(ratios, counts, tuple(records))

    def merged(self, other):
        return OccupancyStats.from_records(self.records + other.records)

    def table_rows(self):
        return [(c, self.counts[c], self.ratios[c]) for c in sorted(self.ratios)]

    def to_csv(self):
        out = io.StringIO()
        out.write("class_id,instances,occupancy\n")
        for c, m, o in self.table_rows():
            out.write(f"{c},{m},{o!r}\n")
        return out.getvalue()

    def to_text(self):
        lines = [f"{'class':>5} {'M_C':>6} {'O_C':>8}"]
        lines += [f"{c:>5} {m:>6} {o:>8.4f}" for c, m, o in self.table_rows()]
        return "\n".join(lines) + "\n"


def occupancy_ratio(instances, subsets):
    """Mean fraction of in-box points claimed by each class's instances."""
    by_id = {s.proposal_id: s for s in subsets}
    records = []
    for inst in instances:
        subset = by_id[inst.proposal_id]
        p_ins = int(np.intersect1d(inst.point_indices, subset.global_indices).size)
        records.append(OccupancyRecord(inst.proposal_id, inst.class_id, p_ins, subset.size))
    return OccupancyStats.from_records(records)


def topk_count(ratio, n):
    return max(1, int(round(ratio * n)))


def binary_topk_labels(sprime, subset, stats):
    """1 for the round(O * N_i) highest S' points, else 0.

    Score ties go to the lower global index.  Returns None when the subset's
    class has no statistics, telling the caller to keep the soft labels.
    """
    if subset.class_id not in stats:
        return None
    sprime = np.asarray(sprime)
    n = topk_count(stats.ratios[subset.class_id], subset.size)
    order = np.lexsort((subset.global_indices, -sprime))
    labels = np.zeros(subset.size)
    labels[order[:n]] = 1.0
    return labels


def refinement_loss(sprimes, labels, eps=BCE_EPS):
    return seed_loss(sprimes, labels, eps)
