"""Scene, proposal and instance files.

A scene is two files sharing a stem:

``<stem>.pts``
    ASCII header terminated by ``end_header`` followed by N x 9 little-endian
    float32 values laid out as ``x y z r g b nx ny nz``.
``<stem>.ann``
    Line-oriented annotation records::

        BOXMINE-ANNOTATIONS 1
        points <N>
        classes <C>
        box <instance_id> <class_id> <xmin> <ymin> <zmin> <xmax> <ymax> <zmax>
        mask <instance_id> <i0> <i1> ...
        proposal <proposal_id> <xmin> ... <zmax> <p_0> ... <p_C-1>

Proposal files reuse the annotation grammar and may hold only ``proposal``
records.  Instance files written by ``mine`` hold ``instance`` records::

    instance <proposal_id> <class_id> <confidence> <i0> <i1> ...

Floats in text records are written with ``repr`` so every value round-trips.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .consistency import BoxProposal
from .errors import BadMagicError, IndexRangeError, SceneParseError, TruncatedPayloadError
from .geometry import Aabb, PointCloud
from .refine import InstanceCandidate

SCENE_MAGIC = "BOXMINE-SCENE"
ANN_MAGIC = "BOXMINE-ANNOTATIONS"
INST_MAGIC = "BOXMINE-INSTANCES"
VERSION = "1"
CHANNELS = "x y z r g b nx ny nz"
PAYLOAD_DTYPE = np.dtype("<f4")


@dataclass(eq=False)
class SceneInstance:
    instance_id: int
    class_id: int
    box: Aabb
    point_indices: np.ndarray


@dataclass(eq=False)
class Scene:
    cloud: PointCloud
    num_classes: int
    instances: list = field(default_factory=list)
    proposals: list = field(default_factory=list)
    name: str = ""


def _fmt(x):
    return repr(float(x))


def scene_paths(path):
    p = Path(path)
    stem = p.with_suffix("") if p.suffix in (".pts", ".ann") else p
    return stem.with_suffix(".pts"), stem.with_suffix(".ann")


def encode_payload(cloud):
    data = np.hstack([cloud.positions, cloud.colors, cloud.normals]).astype(PAYLOAD_DTYPE)
    return data.tobytes(order="C")


def _header(n, num_classes):
    return (f"{SCENE_MAGIC} {VERSION}\npoints {n}\nchannels {CHANNELS}\n"
            f"classes {num_classes}\nunits m\nendianness little\nend_header\n")


def _box_fields(box):
    return " ".join(_fmt(v) for v in (*box.min_corner, *box.max_corner))


def format_proposal(pid, prop):
    probs = " ".join(_fmt(v) for v in prop.class_probs)
    return f"proposal {pid} {_box_fields(prop.box)} {probs}"


def format_annotations(scene):
    n = len(scene.cloud)
    lines = [f"{ANN_MAGIC} {VERSION}", f"points {n}", f"classes {scene.num_classes}"]
    for inst in scene.instances:
        lines.append(f"box {inst.instance_id} {inst.class_id} {_box_fields(inst.box)}")
        lines.append(f"mask {inst.instance_id} " + " ".join(str(int(i)) for i in inst.point_indices))
    for pid, prop in enumerate(scene.proposals):
        lines.append(format_proposal(pid, prop))
    return "\n".join(lines) + "\n"


def save_scene(scene, path):
    pts, ann = scene_paths(path)
    pts.parent.mkdir(parents=True, exist_ok=True)
    with open(pts, "wb") as fh:
        fh.write(_header(len(scene.cloud), scene.num_classes).encode("ascii"))
        fh.write(encode_payload(scene.cloud))
    ann.write_text(format_annotations(scene))
    return pts, ann


def _parse_header(raw):
    end = raw.find(b"end_header\n")
    if not raw.startswith(SCENE_MAGIC.encode()) or end < 0:
        raise BadMagicError("missing scene magic or header terminator")
    lines = raw[:end].decode("ascii").splitlines()
    magic = lines[0].split()
    if magic != [SCENE_MAGIC, VERSION]:
        raise BadMagicError(f"unsupported scene header {lines[0]!r}")
    fields = dict(line.split(" ", 1) for line in lines[1:] if line)
    try:
        n = int(fields["points"])
        num_classes = int(fields["classes"])
    except (KeyError, ValueError) as exc:
        raise SceneParseError(f"malformed scene header: {exc}") from exc
    if fields.get("channels") != CHANNELS or fields.get("endianness", "little") != "little":
        raise SceneParseError("unsupported channel layout or endianness")
    return n, num_classes, raw[end + len(b"end_header\n"):]


def decode_payload(payload, n):
    expected = n * 9 * PAYLOAD_DTYPE.itemsize
    if len(payload) != expected:
        raise TruncatedPayloadError(f"payload holds {len(payload)} bytes, header promises {expected}")
    data = np.frombuffer(payload, dtype=PAYLOAD_DTYPE).reshape(n, 9).astype(np.float64)
    return PointCloud(data[:, 0:3], data[:, 3:6], data[:, 6:9])


def _indices(tokens, n, what):
    try:
        idx = np.array([int(t) for t in tokens], dtype=np.int64)
    except ValueError as exc:
        raise SceneParseError(f"non-integer index in {what}") from exc
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexRangeError(f"{what} references an index outside [0, {n})")
    return idx


def _floats(tokens, what):
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise SceneParseError(f"non-numeric field in {what}") from exc


def parse_annotations(text, n=None, num_classes=None):
    """Parse annotation/proposal records; returns (instances, proposals, C)."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0].split() != [ANN_MAGIC, VERSION]:
        raise BadMagicError("missing annotation magic")
    boxes, masks, proposals = {}, {}, []
    for line in lines[1:]:
        tok = line.split()
        kind = tok[0]
        if kind == "points":
            declared = int(tok[1])
            if n is not None and declared != n:
                raise SceneParseError(f"annotations declare {declared} points, scene has {n}")
            n = declared
        elif kind == "classes":
            num_classes = int(tok[1])
        elif kind == "box":
            vals = _floats(tok[3:9], "box")
            if len(vals) != 6:
                raise SceneParseError("box record needs 6 coordinates")
            boxes[int(tok[1])] = (int(tok[2]), Aabb(vals[:3], vals[3:]))
        elif kind == "mask":
            if n is None:
                raise SceneParseError("mask record before point count")
            masks[int(tok[1])] = _indices(tok[2:], n, f"mask {tok[1]}")
        elif kind == "proposal":
            vals = _floats(tok[2:], "proposal")
            if len(vals) < 7:
                raise SceneParseError("proposal record too short")
            proposals.append(BoxProposal(Aabb(vals[:3], vals[3:6]), np.array(vals[6:])))
        else:
            raise SceneParseError(f"unknown record {kind!r}")
    if num_classes is None:
        raise SceneParseError("annotations lack a class count")
    instances = []
    for iid in sorted(boxes):
        cls, box = boxes[iid]
        if iid not in masks:
            raise SceneParseError(f"instance {iid} has a box but no mask")
        if not (0 <= cls < num_classes):
            raise SceneParseError(f"instance {iid} has class {cls} outside [0, {num_classes})")
        instances.append(SceneInstance(iid, cls, box, masks[iid]))
    for prop in proposals:
        if prop.class_probs.size != num_classes:
            raise SceneParseError("proposal class vector length differs from class count")
    return instances, proposals, num_classes


def load_scene(path):
    pts, ann = scene_paths(path)
    raw = pts.read_bytes()
    n, num_classes, payload = _parse_header(raw)
    cloud = decode_payload(payload, n)
    instances, proposals = [], []
    if ann.exists():
        instances, proposals, num_classes = parse_annotations(ann.read_text(), n, num_classes)
    return Scene(cloud, num_classes, instances, proposals, name=pts.stem)


def load_proposals(path, num_classes=None):
    _, proposals, _ = parse_annotations(Path(path).read_text(), None, num_classes)
    return proposals


def save_proposals(proposals, path, num_classes):
    lines = [f"{ANN_MAGIC} {VERSION}", f"classes {num_classes}"]
    lines += [format_proposal(pid, p) for pid, p in enumerate(proposals)]
    Path(path).write_text("\n".join(lines) + "\n")


def format_instances(instances, n):
    lines = [f"{INST_MAGIC} {VERSION}", f"points {n}"]
    for inst in sorted(instances, key=lambda c: c.proposal_id):
        idx = " ".join(str(int(i)) for i in inst.point_indices)
        lines.append(f"instance {inst.proposal_id} {inst.class_id} {_fmt(inst.confidence)} {idx}")
    return "\n".join(lines) + "\n"


def save_instances(instances, path, n):
    Path(path).write_text(format_instances(instances, n))


def load_instances(path):
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].split() != [INST_MAGIC, VERSION]:
        raise BadMagicError("missing instance-file magic")
    n = None
    out = []
    for line in lines[1:]:
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "points":
            n = int(tok[1])
        elif tok[0] == "instance":
            if n is None:
                raise SceneParseError("instance record before point count")
            idx = _indices(tok[4:], n, f"instance {tok[1]}")
            out.append(InstanceCandidate(int(tok[1]), int(tok[2]), idx, float(tok[3])))
        else:
            raise SceneParseError(f"unknown record {tok[0]!r}")
    return out
