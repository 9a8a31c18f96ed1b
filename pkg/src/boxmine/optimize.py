"""Two-phase energy minimization over per-point logits.

Phase 1 minimizes ``w_seed*L_seed + w_SP*L_SP + w_PC*L_PC``.  Occupancy
statistics are then measured on the phase-1 masks and frozen, and phase 2
swaps the seed term for the occupancy-guided ``w_OR*L_OR``.

All subsets of a scene are packed into flat "membership" arrays (one entry per
(subset, point) pair) so that one energy/gradient evaluation is a handful of
numpy and sparse-matrix operations regardless of the proposal count.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .errors import ConfigurationError, DivergenceError
from .geometry import build_grid, radius_pairs
from .mining import BCE_EPS, MiningConfig, ScoreField, property_disparity, property_weights
from .mining import seed_labels_from
from .refine import InstanceCandidate, OccupancyStats, binary_topk_labels, occupancy_ratio

log = logging.getLogger(__name__)

TERMS = ("seed", "sp", "pc", "or")


@dataclass(frozen=True)
class ScheduleConfig:
    phase1_iters: int = 600
    phase2_iters: int = 200
    step_size: float = 0.05
    decay_points: tuple = (300, 450)
    decay_factor: float = 0.1
    label_refresh_every: int = 10
    w_seed: float = 1.0
    w_sp: float = 1.0
    w_pc: float = 1.0
    w_or: float = 1.0
    divergence_factor: float = 1e6

    def __post_init__(self):
        if self.phase1_iters < 0 or self.phase2_iters < 0:
            raise ConfigurationError("iteration counts must be nonnegative")
        if not self.step_size > 0:
            raise ConfigurationError("step_size must be positive")
        points = tuple(int(p) for p in self.decay_points)
        if list(points) != sorted(points):
            raise ConfigurationError("decay_points must be ascending")
        object.__setattr__(self, "decay_points", points)
        if not (0.0 < self.decay_factor < 1.0):
            raise ConfigurationError("decay_factor must lie in (0, 1)")
        if self.label_refresh_every < 0:
            raise ConfigurationError("label_refresh_every must be nonnegative")
        if min(self.w_seed, self.w_sp, self.w_pc, self.w_or) < 0:
            raise ConfigurationError("loss weights must be nonnegative")

    def weights(self, phase):
        if phase == 1:
            return {"seed": self.w_seed, "sp": self.w_sp, "pc": self.w_pc, "or": 0.0}
        return {"seed": 0.0, "sp": self.w_sp, "pc": self.w_pc, "or": self.w_or}

    def step_at(self, iteration):
        decays = sum(1 for p in self.decay_points if iteration >= p)
        return self.step_size * self.decay_factor ** decays


@dataclass
class EnergyReport:
    initial: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    final_grad_norm: float = float("nan")

    def __len__(self):
        return len(self.rows)

    def totals(self):
        return np.array([r["total"] for r in self.rows])

    def to_csv(self):
        out = io.StringIO()
        out.write("iteration,phase,step,total,seed,sp,pc,or\n")
        for r in self.rows:
            out.write(f"{r['iteration']},{r['phase']},{r['step']!r},{r['total']!r},"
                      f"{r['seed']!r},{r['sp']!r},{r['pc']!r},{r['or']!r}\n")
        return out.getvalue()


@dataclass
class Targets:
    """Stop-gradient quantities: peaks, labels, similarity operator."""

    peak: np.ndarray
    seed_labels: np.ndarray
    discriminative: np.ndarray
    sp_matrix: sp.csr_matrix
    or_labels: np.ndarray | None = None


class MiningProblem:
    """Packed per-scene mining state: subsets, radius pairs and property graph."""

    def __init__(self, cloud, subsets, num_classes, cfg=None):
        self.cloud = cloud
        self.cfg = cfg or MiningConfig()
        self.subsets = list(subsets)
        self.num_points = len(cloud)
        self.num_classes = int(num_classes)
        K = len(self.subsets)
        self.K = K
        sizes = np.array([s.size for s in self.subsets], dtype=np.int64)
        self.sizes = sizes
        self.starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        self.mp = (np.concatenate([s.global_indices for s in self.subsets])
                   if K else np.empty(0, dtype=np.int64))
        self.ms = np.repeat(np.arange(K), sizes)
        self.mc = np.repeat(np.array([s.class_id for s in self.subsets], dtype=np.int64), sizes)
        if np.any(self.mc >= self.num_classes):
            raise ConfigurationError("a subset class id exceeds the number of classes")
        self.M = int(self.mp.size)
        self.inv_kn = 1.0 / (K * sizes[self.ms]) if K else np.empty(0)
        # points outside every subset never receive gradient; the engine works
        # on the compact "active" rows only
        self.active = np.unique(self.mp)
        self.ml = np.searchsorted(self.active, self.mp)
        self.flat = self.ml * self.num_classes + self.mc

        weight = np.bincount(self.ml, weights=self.inv_kn, minlength=self.active.size)
        self.precond = 1.0 / weight

        self._build_radius_pairs()
        self._build_property_graph()

    def _build_radius_pairs(self):
        js, ks = [], []
        r = self.cfg.radius_r
        for i, s in enumerate(self.subsets):
            if s.size < 2:
                continue
            pos = self.cloud.positions[s.global_indices]
            j, k = radius_pairs(build_grid(pos, r), pos, r)
            js.append(j + self.starts[i])
            ks.append(k + self.starts[i])
        self.pair_j = np.concatenate(js) if js else np.empty(0, dtype=np.int64)
        self.pair_k = np.concatenate(ks) if ks else np.empty(0, dtype=np.int64)

    def _build_property_graph(self):
        rows, cols, vals = [], [], []
        self.graphs = []
        for s in self.subsets:
            if s.size < 2:
                self.graphs.append(None)
                continue
            k = min(self.cfg.k_neighbors, s.size - 1)
            g = property_weights(self.cloud, s, property_disparity(self.cloud, s), self.cfg, k=k)
            self.graphs.append(g)
            if g.w_count == 0:
                continue
            coef = g.weights / (self.K * g.w_count)
            local = np.searchsorted(self.active, s.global_indices)
            a = local[g.a]
            b = local[g.b]
            # w (S_a - S_b)^2 as a Laplacian contribution
            rows += [a, b, a, b]
            cols += [a, b, b, a]
            vals += [coef, coef, -coef, -coef]
        n = self.active.size
        if rows:
            self.pc_laplacian = sp.csr_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
        else:
            self.pc_laplacian = sp.csr_matrix((n, n))

    # -- stop-gradient targets -------------------------------------------------

    def _scores(self, logits):
        """Scores of the active rows of full N x C ``logits``."""
        return expit(np.asarray(logits)[self.active])

    def peaks(self, scores):
        if self.M == 0:
            return np.empty(0)
        return np.maximum.reduceat(scores[self.ml, self.mc], self.starts)

    def sprime(self, scores, peak=None):
        peak = self.peaks(scores) if peak is None else peak
        return scores[self.ml, self.mc] / peak[self.ms]

    def subset_sprimes(self, field):
        sprime = self.sprime(self._scores(field.logits))
        return [sprime[st:st + n] for st, n in zip(self.starts, self.sizes)]

    def seed_labels(self, scores, peak=None):
        sprime = self.sprime(scores, peak)
        argmax_is_class = np.argmax(scores[self.ml], axis=1) == self.mc
        return seed_labels_from(sprime, argmax_is_class, self.cfg.delta_low, self.cfg.delta_high)

    def targets(self, field, stats=None):
        return self._targets(self._scores(field.logits), stats)

    def _targets(self, scores, stats=None):
        peak = self.peaks(scores)
        sprime = self.sprime(scores, peak)
        labels = self.seed_labels(scores, peak)
        disc = labels.discriminative
        n_disc = np.bincount(self.ms[disc], minlength=self.K)
        keep = disc[self.pair_k]
        j, k = self.pair_j[keep], self.pair_k[keep]
        ss = np.exp(-((sprime[j] - sprime[k]) ** 2) / self.cfg.sigma)
        coef = ss / (self.K * n_disc[self.ms[k]] * self.sizes[self.ms[k]])
        m = self.M
        sp_matrix = sp.csr_matrix(
            (np.concatenate([coef, coef, -coef, -coef]),
             (np.concatenate([j, k, j, k]), np.concatenate([j, k, k, j]))), shape=(m, m))
        or_labels = None
        if stats is not None:
            or_labels = labels.labels.copy()
            for i, s in enumerate(self.subsets):
                sl = slice(self.starts[i], self.starts[i] + self.sizes[i])
                top = binary_topk_labels(sprime[sl], s, stats)
                if top is not None:
                    or_labels[sl] = top
        return Targets(peak, labels.labels, disc, sp_matrix, or_labels)

    # -- energy and gradient ---------------------------------------------------
    # Public methods take full N x C logits; the underscored ones take the
    # compact active rows and are what the optimizer loop calls.

    @staticmethod
    def _bce(labels, sprime):
        return -(labels * np.log(np.maximum(sprime, BCE_EPS))
                 + (1.0 - labels) * np.log(np.maximum(1.0 - sprime, BCE_EPS)))

    @staticmethod
    def _bce_grad(labels, sprime):
        g = np.where(sprime > BCE_EPS, -labels / np.maximum(sprime, BCE_EPS), 0.0)
        g += np.where(1.0 - sprime > BCE_EPS, (1.0 - labels) / np.maximum(1.0 - sprime, BCE_EPS), 0.0)
        return g

    def _terms(self, za, targets, peak=None):
        scores = expit(za)
        peak = targets.peak if peak is None else peak
        out = dict.fromkeys(TERMS, 0.0)
        if self.M == 0:
            return out
        sprime = self.sprime(scores, peak)
        out["seed"] = float(np.sum(self.inv_kn * self._bce(targets.seed_labels, sprime)))
        out["sp"] = float(sprime @ (targets.sp_matrix @ sprime))
        out["pc"] = float(np.sum(scores * (self.pc_laplacian @ scores)))
        if targets.or_labels is not None:
            out["or"] = float(np.sum(self.inv_kn * self._bce(targets.or_labels, sprime)))
        return out

    def _energy(self, za, targets, weights, peak=None):
        t = self._terms(za, targets, peak)
        total = sum(weights[name] * t[name] for name in TERMS if weights[name] != 0.0)
        return total, t

    def _gradient(self, za, targets, weights, peak=None):
        scores = expit(za)
        dsig = scores * (1.0 - scores)
        grad = np.zeros_like(scores)
        if self.M == 0:
            return grad
        peak = targets.peak if peak is None else peak
        if weights["pc"]:
            grad += (2.0 * weights["pc"]) * (self.pc_laplacian @ scores) * dsig
        sprime = self.sprime(scores, peak)
        g = np.zeros(self.M)
        if weights["seed"]:
            g += weights["seed"] * self.inv_kn * self._bce_grad(targets.seed_labels, sprime)
        if weights["or"] and targets.or_labels is not None:
            g += weights["or"] * self.inv_kn * self._bce_grad(targets.or_labels, sprime)
        if weights["sp"]:
            g += (2.0 * weights["sp"]) * (targets.sp_matrix @ sprime)
        g = g / peak[self.ms] * dsig[self.ml, self.mc]
        grad += np.bincount(self.flat, weights=g, minlength=grad.size).reshape(grad.shape)
        return grad

    def terms(self, logits, targets, peak=None):
        """Unweighted loss terms at full ``logits`` under frozen ``targets``."""
        return self._terms(np.asarray(logits)[self.active], targets, peak)

    def energy(self, logits, targets, weights, peak=None):
        return self._energy(np.asarray(logits)[self.active], targets, weights, peak)

    def gradient(self, logits, targets, weights, peak=None):
        """Gradient with respect to the full N x C logits."""
        logits = np.asarray(logits)
        grad = np.zeros(logits.shape)
        grad[self.active] = self._gradient(logits[self.active], targets, weights, peak)
        return grad

    def term_gradient(self, logits, targets, name, peak=None):
        weights = dict.fromkeys(TERMS, 0.0)
        weights[name] = 1.0
        return self.gradient(logits, targets, weights, peak)

    # -- masks -----------------------------------------------------------------

    def phase1_instances(self, field):
        """Per-subset masks: points whose soft seed label is at least 0.5."""
        labels = self.seed_labels(self._scores(field.logits)).labels
        out = []
        for i, s in enumerate(self.subsets):
            sl = slice(self.starts[i], self.starts[i] + self.sizes[i])
            chosen = s.global_indices[labels[sl] >= 0.5]
            out.append(InstanceCandidate(s.proposal_id, s.class_id, chosen, 1.0))
        return out


def total_energy(field, problem, targets, cfg, phase=1):
    total, terms = problem.energy(field.logits, targets, cfg.weights(phase))
    return total, terms


def energy_gradient(field, problem, targets, cfg, phase=1):
    return problem.gradient(field.logits, targets, cfg.weights(phase))


def finite_difference_gradient(fun, x, h=1e-5):
    """Central differences of scalar ``fun`` over every entry of ``x``."""
    x = np.array(x, dtype=np.float64, copy=True)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = fun(x)
        flat[i] = old - h
        fm = fun(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic, numeric):
    """max |a - n| / max |n|  (normwise, infinity norm)."""
    scale = max(float(np.max(np.abs(numeric))), float(np.max(np.abs(analytic))), 1e-12)
    return float(np.max(np.abs(analytic - numeric))) / scale


def _run_phase(problem, logits, cfg, phase, report, start_iter, n_iters, stats, frozen):
    """Preconditioned gradient descent on the active rows of ``logits`` (in place)."""
    weights = cfg.weights(phase)
    precond = problem.precond[:, None]
    za = logits[problem.active]
    targets = problem._targets(expit(za), stats)
    reference = None
    for t in range(n_iters):
        it = start_iter + t
        refresh = cfg.label_refresh_every
        if not frozen and refresh and t > 0 and t % refresh == 0:
            targets = problem._targets(expit(za), stats)
        peak = None if frozen else problem.peaks(expit(za))
        if reference is None:
            reference, t0 = problem._energy(za, targets, weights, peak)
            report.initial.setdefault(phase, dict(t0, total=reference))
        step = cfg.step_at(it)
        za = za - step * precond * problem._gradient(za, targets, weights, peak)
        total, terms = problem._energy(za, targets, weights, peak)
        report.rows.append(dict(terms, iteration=it, phase=phase, step=step, total=total))
        if not np.isfinite(total) or abs(total) > cfg.divergence_factor * max(abs(reference), 1.0):
            logits[problem.active] = za
            raise DivergenceError(f"energy diverged at iteration {it}: {total}", report)
    logits[problem.active] = za
    return logits, targets


def minimize(field, problem, cfg=None, stats=None, frozen=False):
    """Run both phases; returns ``(field, report, stats)``.

    ``stats`` overrides the occupancy statistics measured after phase 1.
    With ``frozen=True`` labels, similarities and peaks are computed once per
    phase and never refreshed, which makes each phase plain preconditioned
    gradient descent on a fixed smooth energy.
    """
    cfg = cfg or ScheduleConfig()
    report = EnergyReport()
    logits = np.array(field.logits, dtype=np.float64)
    if problem.M == 0:
        return field, report, stats or OccupancyStats()
    logits, _ = _run_phase(problem, logits, cfg, 1, report, 0, cfg.phase1_iters, None, frozen)
    if stats is None:
        stats = occupancy_ratio(problem.phase1_instances(ScoreField(logits)), problem.subsets)
    logits, targets = _run_phase(problem, logits, cfg, 2, report, cfg.phase1_iters,
                                 cfg.phase2_iters, stats, frozen)
    phase = 2 if cfg.phase2_iters else 1
    grad = problem.gradient(logits, targets, cfg.weights(phase))
    report.final_grad_norm = float(np.linalg.norm(grad))
    return ScoreField(logits), report, stats
