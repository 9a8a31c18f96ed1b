"""Instance-segmentation AP / mAP at mask-IoU thresholds."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import EvaluationError

DEFAULT_THRESHOLDS = (0.25, 0.5)


@dataclass(frozen=True, eq=False)
class GroundTruthInstance:
    class_id: int
    point_indices: np.ndarray

    def __post_init__(self):
        idx = np.unique(np.asarray(self.point_indices, dtype=np.int64))
        if idx.size == 0:
            raise EvaluationError("ground-truth instance has no points")
        object.__setattr__(self, "point_indices", idx)


@dataclass(frozen=True)
class PrCurve:
    recall: tuple
    precision: tuple
    ap: float


@dataclass
class MapResult:
    thresholds: tuple
    classes: tuple
    ap: dict  # threshold -> {class_id: ap}
    mean: dict  # threshold -> mAP
    gt_counts: dict
    flagged: tuple = ()

    def to_csv(self):
        out = io.StringIO()
        out.write("threshold," + ",".join(f"class_{c}" for c in self.classes) + ",mAP\n")
        for t in self.thresholds:
            cells = [repr(self.ap[t][c]) for c in self.classes]
            out.write(f"{t!r}," + ",".join(cells) + f",{self.mean[t]!r}\n")
        return out.getvalue()

    def to_text(self):
        head = f"{'metric':<10}" + "".join(f"{'class ' + str(c):>10}" for c in self.classes) + f"{'mAP':>10}"
        lines = [head]
        for t in self.thresholds:
            name = f"AP@{int(round(t * 100))}%"
            row = "".join(f"{self.ap[t][c]:>10.4f}" for c in self.classes)
            lines.append(f"{name:<10}{row}{self.mean[t]:>10.4f}")
        return "\n".join(lines) + "\n"


def _iou(a, b):
    inter = np.intersect1d(a, b, assume_unique=True).size
    return inter / (a.size + b.size - inter)


def sort_predictions(preds):
    return sorted(preds, key=lambda p: (-p.confidence, p.proposal_id))


def match_predictions(preds, gts, iou_threshold):
    """Greedy TP/FP flags for predictions already sorted by confidence.

    Each prediction takes the still-unmatched ground truth of highest IoU
    (lowest GT index on ties) if that IoU reaches the threshold.
    """
    matched = np.zeros(len(gts), dtype=bool)
    flags = []
    for p in preds:
        best, best_iou = -1, -1.0
        for g, gt in enumerate(gts):
            if matched[g]:
                continue
            iou = _iou(p.point_indices, gt.point_indices)
            if iou > best_iou:
                best, best_iou = g, iou
        if best >= 0 and best_iou >= iou_threshold:
            matched[best] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def pr_curve(flags, num_gt):
    if num_gt < 1:
        raise EvaluationError("precision-recall needs at least one ground-truth instance")
    tp = np.cumsum(np.asarray(flags, dtype=np.int64))
    n = np.arange(1, len(flags) + 1)
    recall = tp / num_gt
    precision = tp / n
    return recall, precision


def average_precision(flags, num_gt):
    """Area under the monotone precision envelope, integrated over recall steps."""
    if len(flags) == 0:
        if num_gt < 1:
            raise EvaluationError("average precision needs at least one ground-truth instance")
        return 0.0
    recall, precision = pr_curve(flags, num_gt)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], recall]))
    return float(np.sum(steps * envelope))


def map_at(preds, gts, thresholds=DEFAULT_THRESHOLDS):
    """Per-class AP and mAP for each threshold.

    ``preds`` and ``gts`` may be lists of per-scene lists; predictions are only
    matched against ground truth of the same scene.
    """
    pred_scenes = preds if preds and isinstance(preds[0], list) else [preds]
    gt_scenes = gts if gts and isinstance(gts[0], list) else [gts]
    if not any(gt_scenes):
        raise EvaluationError("no ground-truth instances to evaluate against")
    if len(pred_scenes) == 1 and len(gt_scenes) > 1 and not pred_scenes[0]:
        pred_scenes = [[] for _ in gt_scenes]
    if len(pred_scenes) != len(gt_scenes):
        raise EvaluationError("prediction and ground-truth scene counts differ")
    gt_counts = {}
    for scene in gt_scenes:
        for g in scene:
            gt_counts[g.class_id] = gt_counts.get(g.class_id, 0) + 1
    classes = tuple(sorted(gt_counts))
    flagged = tuple(sorted({p.class_id for s in pred_scenes for p in s} - set(classes)))
    ap, mean = {}, {}
    for t in thresholds:
        ap[t] = {}
        for c in classes:
            scored = []  # (confidence, scene, proposal_id, tp)
            for si, (ps, gs) in enumerate(zip(pred_scenes, gt_scenes)):
                cp = sort_predictions([p for p in ps if p.class_id == c])
                cg = [g for g in gs if g.class_id == c]
                for p, f in zip(cp, match_predictions(cp, cg, t)):
                    scored.append((-p.confidence, si, p.proposal_id, f))
            scored.sort(key=lambda r: r[:3])
            ap[t][c] = average_precision([r[3] for r in scored], gt_counts[c])
        mean[t] = float(np.mean([ap[t][c] for c in classes]))
    return MapResult(tuple(thresholds), classes, ap, mean, gt_counts, flagged)
