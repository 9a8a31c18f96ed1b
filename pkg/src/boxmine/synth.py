"""Synthetic indoor-like scenes with per-class designed occupancy ratios.

Each instance is an axis-aligned object sitting slightly above a floor plane.
Its box holds the object's surface points plus background clutter, with the
clutter count chosen so that (object points) / (in-box points) hits the class
target.  Remaining background is floor plus free-floating clutter kept away
from every box.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, GenerationError
from .geometry import Aabb, PointCloud, points_in_box
from .scenefile import Scene, SceneInstance

SHAPES = ("full-box", "shell", "l-shape")

# four classes with distinct occupancy so per-class statistics are separable
DEFAULT_RECIPES = (("full-box", 1.0), ("l-shape", 0.84), ("l-shape", 0.7), ("shell", 0.54))

CLASS_COLORS = np.array([
    [0.85, 0.15, 0.15],
    [0.15, 0.75, 0.20],
    [0.15, 0.25, 0.85],
    [0.85, 0.75, 0.10],
    [0.70, 0.15, 0.80],
    [0.10, 0.75, 0.80],
])

FACE_NORMALS = np.array([[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]], float)

OCCUPANCY_TOL = 0.02
LIFT = 0.05


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    min_instances: int = 4
    max_instances: int = 8
    recipes: tuple = DEFAULT_RECIPES
    box_points: tuple = (350, 550)
    box_size: tuple = (0.4, 1.0)
    room_size: float = 6.0
    floor_points: int = 3500
    clutter_points: int = 3000
    clutter_clearance: float = 0.15
    color_noise: float = 0.03
    normal_noise: float = 0.05
    color_margin: float = 0.3

    def __post_init__(self):
        recipes = tuple((str(s), float(o)) for s, o in self.recipes)
        object.__setattr__(self, "recipes", recipes)
        for shape, occ in recipes:
            if shape not in SHAPES:
                raise ConfigurationError(f"unknown shape recipe {shape!r}")
            if not (0.0 < occ <= 1.0):
                raise ConfigurationError(f"target occupancy {occ} outside (0, 1]")
        if not (1 <= self.min_instances <= self.max_instances):
            raise ConfigurationError("need 1 <= min_instances <= max_instances")
        if len(recipes) > len(CLASS_COLORS):
            raise ConfigurationError(f"at most {len(CLASS_COLORS)} classes are supported")
        if self.box_points[0] < 20 or self.box_points[0] > self.box_points[1]:
            raise ConfigurationError("box_points must be an ascending pair with minimum >= 20")

    @property
    def num_classes(self):
        return len(self.recipes)


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _noisy_normals(rng, normals, amp):
    return _unit(normals + rng.normal(0.0, amp, size=normals.shape))


def _random_normals(rng, n):
    return _unit(rng.normal(size=(n, 3)))


def _gray(rng, n, noise):
    level = rng.uniform(0.35, 0.6, size=(n, 1))
    return np.clip(level + rng.normal(0.0, noise, size=(n, 3)), 0.0, 1.0)


def _gray_distance(color):
    """Euclidean distance from a color to the gray axis r = g = b."""
    return float(np.linalg.norm(color - color.mean()))


def _face_areas(lo, hi):
    """Areas of the six faces of a box, in FACE_NORMALS order."""
    ex = hi - lo
    areas = np.array([ex[1] * ex[2]] * 2 + [ex[0] * ex[2]] * 2 + [ex[0] * ex[1]] * 2)
    return areas


def sample_box_surface(rng, lo, hi, n):
    """n points on the box surface, area-weighted with at least one per face."""
    areas = _face_areas(lo, hi)
    counts = np.ones(6, dtype=np.int64)
    counts += rng.multinomial(n - 6, areas / areas.sum())
    pts, nrm = [], []
    for face, cnt in enumerate(counts):
        axis, side = divmod(face, 2)
        p = rng.uniform(lo, hi, size=(cnt, 3))
        p[:, axis] = hi[axis] if side else lo[axis]
        pts.append(p)
        nrm.append(np.repeat(FACE_NORMALS[face][None], cnt, axis=0))
    return np.vstack(pts), np.vstack(nrm)


def sample_l_surface(rng, lo, hi, n):
    """n surface points of an L-prism: the box minus its (+x, +y) quarter column.

    The outer box surface (minus the removed column) and the two inner walls
    are sampled by area; one point is pinned to each extreme face so the tight
    box of the result equals the design box.
    """
    mid = (lo + hi) / 2.0
    ez = hi[2] - lo[2]
    walls = [  # (axis, coordinate, range lo, range hi, normal)
        (0, mid[0], np.array([mid[0], mid[1], lo[2]]), np.array([mid[0], hi[1], hi[2]]), FACE_NORMALS[1]),
        (1, mid[1], np.array([mid[0], mid[1], lo[2]]), np.array([hi[0], mid[1], hi[2]]), FACE_NORMALS[3]),
    ]
    wall_areas = np.array([(hi[1] - mid[1]) * ez, (hi[0] - mid[0]) * ez])
    outer_area = _face_areas(lo, hi).sum()
    # pinned extremes: -x, +x (y below mid), -y, +y (x below mid), -z, +z
    pin_lo = [lo, np.array([lo[0], lo[1], lo[2]]), lo, np.array([lo[0], lo[1], lo[2]]), lo, lo]
    pin_hi = [hi, np.array([hi[0], mid[1], hi[2]]), hi, np.array([mid[0], hi[1], hi[2]]),
              np.array([mid[0], hi[1], hi[2]]), np.array([mid[0], hi[1], hi[2]])]
    pts, nrm = [], []
    for face in range(6):
        axis, side = divmod(face, 2)
        p = rng.uniform(pin_lo[face], pin_hi[face], size=(1, 3))
        p[:, axis] = hi[axis] if side else lo[axis]
        pts.append(p)
        nrm.append(FACE_NORMALS[face][None])
    have = 6
    probs = np.concatenate([[outer_area], wall_areas])
    probs = probs / probs.sum()
    while have < n:
        m = 2 * (n - have) + 8
        which = rng.choice(3, size=m, p=probs)
        n_outer = int(np.sum(which == 0))
        p, q = sample_box_surface(rng, lo, hi, max(n_outer, 6))
        removed = (p[:, 0] > mid[0]) & (p[:, 1] > mid[1])
        pts.append(p[~removed])
        nrm.append(q[~removed])
        for w, (axis, coord, wlo, whi, normal) in enumerate(walls):
            cnt = int(np.sum(which == w + 1))
            wp = rng.uniform(wlo, whi, size=(cnt, 3))
            wp[:, axis] = coord
            pts.append(wp)
            nrm.append(np.repeat(normal[None], cnt, axis=0))
        have = sum(len(x) for x in pts)
    pts, nrm = np.vstack(pts), np.vstack(nrm)
    keep = np.concatenate([np.arange(6), 6 + rng.permutation(len(pts) - 6)[: n - 6]])
    return pts[keep], nrm[keep]


def _l_cutout(lo, hi):
    mid = (lo + hi) / 2.0
    return np.array([mid[0], mid[1], lo[2]]), hi.copy()


def realize_instance(rng, shape, occupancy, lo, hi, n_box, normal_noise):
    """Object points, object normals and in-box clutter points for one box."""
    n_obj = int(round(occupancy * n_box))
    n_bg = n_box - n_obj
    if shape == "full-box":
        if n_bg != 0:
            raise GenerationError(f"full-box recipe cannot realize occupancy {occupancy}")
        pts, nrm = sample_box_surface(rng, lo, hi, n_obj)
        clutter = np.empty((0, 3))
    else:
        if n_bg < 1:
            raise GenerationError(f"{shape} recipe needs background inside the box; "
                                  f"occupancy {occupancy} leaves none")
        if n_obj < 12:
            raise GenerationError(f"occupancy {occupancy} leaves too few object points")
        inset = 0.1 * (hi - lo)
        if shape == "shell":
            pts, nrm = sample_box_surface(rng, lo, hi, n_obj)
            clutter = rng.uniform(lo + inset, hi - inset, size=(n_bg, 3))
        else:
            pts, nrm = sample_l_surface(rng, lo, hi, n_obj)
            clo, chi = _l_cutout(lo, hi)
            clutter = rng.uniform(clo + inset / 2, chi - inset / 2, size=(n_bg, 3))
    return pts, _noisy_normals(rng, nrm, normal_noise), clutter


def _slots(cfg, rng, count):
    per_side = int(cfg.room_size // 1.5)
    if per_side * per_side < count:
        raise GenerationError("room too small for the requested instance count")
    chosen = rng.choice(per_side * per_side, size=count, replace=False)
    spacing = cfg.room_size / per_side
    return [((c % per_side + 0.5) * spacing, (c // per_side + 0.5) * spacing) for c in chosen]


def generate_scene(cfg, scene_index=0):
    """Build one scene deterministically from ``cfg.seed`` and ``scene_index``."""
    rng = np.random.default_rng([cfg.seed, scene_index])
    C = cfg.num_classes
    for c in range(C):
        if _gray_distance(CLASS_COLORS[c]) < cfg.color_margin + 0.05:
            raise GenerationError(f"class {c} color too close to the background palette")
    count = int(rng.integers(cfg.min_instances, cfg.max_instances + 1))
    slots = _slots(cfg, rng, count)
    blocks = []  # (positions, colors, normals, instance id or -1)
    boxes = []
    classes = []
    for iid, (cx, cy) in enumerate(slots):
        cls = int(rng.integers(C))
        shape, occ = cfg.recipes[cls]
        size = rng.uniform(*cfg.box_size, size=3)
        lo = np.array([cx - size[0] / 2, cy - size[1] / 2, LIFT])
        hi = lo + size
        n_box = int(rng.integers(cfg.box_points[0], cfg.box_points[1] + 1))
        pts, nrm, clutter = realize_instance(rng, shape, occ, lo, hi, n_box, cfg.normal_noise)
        base = np.clip(CLASS_COLORS[cls] + rng.uniform(-0.05, 0.05, size=3), 0.0, 1.0)
        if _gray_distance(base) < cfg.color_margin:
            raise GenerationError("instance color violates the background margin")
        col = np.clip(base + rng.normal(0.0, cfg.color_noise, size=pts.shape), 0.0, 1.0)
        blocks.append((pts, col, nrm, iid))
        if len(clutter):
            blocks.append((clutter, _gray(rng, len(clutter), cfg.color_noise),
                           _random_normals(rng, len(clutter)), -1))
        boxes.append((lo, hi))
        classes.append(cls)

    floor = np.column_stack([rng.uniform(0, cfg.room_size, size=(cfg.floor_points, 2)),
                             rng.normal(0.0, 0.003, size=cfg.floor_points)])
    floor_n = _noisy_normals(rng, np.tile([0.0, 0.0, 1.0], (cfg.floor_points, 1)), cfg.normal_noise)
    blocks.append((floor, _gray(rng, cfg.floor_points, cfg.color_noise), floor_n, -1))

    clutter = _free_clutter(rng, cfg, boxes)
    blocks.append((clutter, _gray(rng, len(clutter), cfg.color_noise),
                   _random_normals(rng, len(clutter)), -1))

    pos = np.vstack([b[0] for b in blocks])
    col = np.vstack([b[1] for b in blocks])
    nrm = np.vstack([b[2] for b in blocks])
    owner = np.concatenate([np.full(len(b[0]), b[3]) for b in blocks])
    perm = rng.permutation(len(pos))
    pos, col, nrm, owner = pos[perm], col[perm], nrm[perm], owner[perm]

    # quantize once so the in-memory scene equals its float32 file image
    pos = pos.astype(np.float32).astype(np.float64)
    col = col.astype(np.float32).astype(np.float64)
    nrm = _unit(nrm).astype(np.float32).astype(np.float64)
    cloud = PointCloud(pos, col, nrm)

    instances = []
    for iid, cls in enumerate(classes):
        idx = np.nonzero(owner == iid)[0]
        box = Aabb.from_points(pos[idx])
        target = cfg.recipes[cls][1]
        realized = idx.size / points_in_box(cloud, box).size
        if abs(realized - target) > OCCUPANCY_TOL:
            raise GenerationError(f"instance {iid}: realized occupancy {realized:.3f} "
                                  f"misses target {target}")
        instances.append(SceneInstance(iid, cls, box, idx))
    return Scene(cloud, C, instances, [], name=f"scene_{scene_index:03d}")


def _free_clutter(rng, cfg, boxes):
    out = []
    need = cfg.clutter_points
    lo = np.array([l for l, _ in boxes]) - cfg.clutter_clearance
    hi = np.array([h for _, h in boxes]) + cfg.clutter_clearance
    while need > 0:
        cand = np.column_stack([rng.uniform(0, cfg.room_size, size=(2 * need + 16, 2)),
                                rng.uniform(LIFT, 1.5, size=2 * need + 16)])
        blocked = np.any(np.all((cand[:, None, :] >= lo[None]) & (cand[:, None, :] <= hi[None]),
                                axis=2), axis=1)
        cand = cand[~blocked][:need]
        out.append(cand)
        need -= len(cand)
    return np.vstack(out) if out else np.empty((0, 3))


def _generate_one(args):
    return generate_scene(*args)


def generate_scenes(cfg, count, jobs=1):
    """Scenes ``0..count-1``; each has its own generator, so ``jobs`` only affects speed."""
    work = [(cfg, i) for i in range(count)]
    if jobs <= 1 or count <= 1:
        return [_generate_one(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_generate_one, work))


def realized_occupancy(scene):
    """Per-instance (class_id, object points / in-box points) on the GT boxes."""
    return [(inst.class_id, inst.point_indices.size / points_in_box(scene.cloud, inst.box).size)
            for inst in scene.instances]
