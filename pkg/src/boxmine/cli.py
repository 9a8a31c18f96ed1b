"""Command-line entry point: ``boxmine <subcommand> ...``.

Exit status is 0 on success, 1 when inputs fail validation (missing ground
truth, corrupt files, a failed gradient audit) and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .audit import gradient_audit
from .consistency import ConsistencyConfig, consistency_loss, transform_proposals
from .errors import BoxMineError
from .evaluate import DEFAULT_THRESHOLDS, GroundTruthInstance, map_at
from .mining import MiningConfig
from .optimize import ScheduleConfig
from .perturb import PerturbationSpec, compose_perturbation, sample_perturbation
from .pipeline import (PROPOSAL_TAGS, PipelineConfig, ProposalSource, build_subsets, make_proposals,
                       mine_scene)
from .refine import InstanceCandidate, OccupancyStats, occupancy_ratio
from .scenefile import load_instances, load_proposals, load_scene, save_instances, save_scene
from .synth import SynthConfig, generate_scenes

EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- config flags --------------------------------------------------------------

def _add_config_flags(parser, cls, skip=()):
    group = parser.add_argument_group(cls.__name__)
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        flag = "--" + f.name.replace("_", "-")
        default = f.default
        if isinstance(default, bool):
            group.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction,
                               default=None, help=f"default {default}")
        elif isinstance(default, tuple):
            kind = type(default[0]) if default else float
            group.add_argument(flag, dest=f.name, type=kind, nargs=len(default) or "+",
                               default=None, help=f"default {' '.join(map(str, default))}")
        else:
            group.add_argument(flag, dest=f.name, type=type(default), default=None,
                               help=f"default {default}")


def _config(cls, args, **extra):
    values = {f.name: getattr(args, f.name) for f in dataclasses.fields(cls)
              if getattr(args, f.name, None) is not None}
    values.update(extra)
    return cls(**values)


def _scene_inputs(paths):
    out = []
    for p in map(Path, paths):
        out += sorted(p.glob("*.pts")) if p.is_dir() else [p.with_suffix(".pts")]
    if not out:
        raise BoxMineError("no scene files found")
    return out


def _proposal_seed(seed, index):
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _gt(scene):
    return [GroundTruthInstance(g.class_id, g.point_indices) for g in scene.instances]


def _write(path, text):
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


# -- subcommands ---------------------------------------------------------------

def cmd_synth(args):
    extra = {"seed": args.seed}
    if args.recipe:
        extra["recipes"] = tuple(_parse_recipe(r) for r in args.recipe)
    cfg = _config(SynthConfig, args, **extra)
    out = Path(args.out)
    for i, scene in enumerate(generate_scenes(cfg, args.scenes, jobs=args.jobs)):
        save_scene(scene, out / f"scene_{i:03d}")
    print(f"wrote {args.scenes} scenes to {out}")
    return EXIT_OK


def _parse_recipe(text):
    shape, _, occ = text.partition(":")
    try:
        return shape, float(occ)
    except ValueError as exc:
        raise BoxMineError(f"recipe {text!r} is not of the form shape:occupancy") from exc


def cmd_mine(args):
    mining = _config(MiningConfig, args)
    schedule = _config(ScheduleConfig, args)
    pipeline = _config(PipelineConfig, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, path in enumerate(_scene_inputs(args.inputs)):
        scene = load_scene(path)
        source = ProposalSource(args.proposals, _proposal_seed(args.seed, i))
        proposals = make_proposals(scene, source, pipeline)
        result = mine_scene(scene.cloud, proposals, scene.num_classes, mining, schedule, pipeline)
        save_instances(result.instances, out / f"{path.stem}.inst", len(scene.cloud))
        if result.report is not None:
            _write(out / f"{path.stem}.energy.csv", result.report.to_csv())
        print(f"{path.stem}: {len(result.instances)} instances")
    return EXIT_OK


def _load_pairs(args):
    pred_dir = Path(args.pred)
    scenes, preds = [], []
    for path in _scene_inputs(args.inputs):
        scene = load_scene(path)
        inst = pred_dir / f"{path.stem}.inst"
        if not inst.exists():
            raise BoxMineError(f"no predictions for scene {path.stem} in {pred_dir}")
        scenes.append(scene)
        preds.append(load_instances(inst))
    return scenes, preds


def cmd_eval(args):
    scenes, preds = _load_pairs(args)
    gts = [_gt(s) for s in scenes]
    if not any(gts):
        print("error: scenes carry no ground-truth instances", file=sys.stderr)
        return EXIT_INVALID
    result = map_at(preds, gts, tuple(args.thresholds))
    text = result.to_text()
    print(text, end="")
    if result.flagged:
        print(f"note: predicted classes without ground truth: {list(result.flagged)}")
    if args.out:
        _write(f"{args.out}.txt", text)
        _write(f"{args.out}.csv", result.to_csv())
    return EXIT_OK


def cmd_occupancy(args):
    scenes, preds = _load_pairs(args)
    pipeline = _config(PipelineConfig, args)
    pred_records, gt_records = [], []
    for i, (scene, inst) in enumerate(zip(scenes, preds)):
        proposals = make_proposals(scene, ProposalSource(args.proposals, _proposal_seed(args.seed, i)),
                                   pipeline)
        pred_records += occupancy_ratio(inst, build_subsets(scene.cloud, proposals)).records
        gt_props = make_proposals(scene, ProposalSource("ground-truth"), pipeline)
        gt_inst = [_as_candidate(pid, g) for pid, g in enumerate(scene.instances)]
        gt_records += occupancy_ratio(gt_inst, build_subsets(scene.cloud, gt_props)).records
    pred = OccupancyStats.from_records(pred_records)
    gt = OccupancyStats.from_records(gt_records)
    classes = sorted(set(pred.ratios) | set(gt.ratios))
    nan = float("nan")
    rows = [(c, pred.counts.get(c, 0), pred.ratios.get(c, nan), gt.counts.get(c, 0), gt.ratios.get(c, nan))
            for c in classes]
    text = [f"{'class':>5} {'mined':>6} {'O_mined':>8} {'gt':>6} {'O_gt':>8}"]
    text += [f"{c:>5} {pm:>6} {po:>8.4f} {gm:>6} {go:>8.4f}" for c, pm, po, gm, go in rows]
    csv = ["class_id,mined_instances,mined_occupancy,gt_instances,gt_occupancy"]
    csv += [f"{c},{pm},{po!r},{gm},{go!r}" for c, pm, po, gm, go in rows]
    print("\n".join(text))
    if args.out:
        _write(f"{args.out}.txt", "\n".join(text) + "\n")
        _write(f"{args.out}.csv", "\n".join(csv) + "\n")
    return EXIT_OK


def _as_candidate(proposal_id, instance):
    return InstanceCandidate(proposal_id, instance.class_id, instance.point_indices, 1.0)


def cmd_consistency(args):
    scene = load_scene(args.scene)
    cfg = _config(ConsistencyConfig, args)
    rng = np.random.default_rng(args.seed)
    spec = sample_perturbation(rng, args.jitter)
    if args.theta is not None or args.flip is not None:
        spec = PerturbationSpec(spec.jitter_noise, args.flip if args.flip is not None else spec.flip_sign,
                                args.theta if args.theta is not None else spec.theta)
    m = compose_perturbation(spec)
    proposals = make_proposals(scene, ProposalSource(args.proposals, _proposal_seed(args.seed, 0)))
    if args.perturbed:
        other = load_proposals(args.perturbed, scene.num_classes)
    else:
        other = transform_proposals(m, proposals)
    terms = consistency_loss(transform_proposals(m, proposals), other, cfg)
    print(f"perturbation {spec.to_record()}")
    print(f"semantic  {terms.semantic!r}")
    print(f"geometric {terms.geometric!r}")
    print(f"total     {terms.total!r}")
    return EXIT_OK


def cmd_grad_check(args):
    worst = gradient_audit(args.instances, args.max_points, args.classes, seed=args.seed)
    failed = False
    for name, err in worst.items():
        ok = err < args.tolerance
        failed |= not ok
        print(f"{name:<5} max relative error {err:.3e} {'ok' if ok else 'FAIL'}")
    return EXIT_INVALID if failed else EXIT_OK


# -- parser --------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="boxmine", description="Box-supervised point instance mining.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic scene set")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenes", type=int, default=20)
    p.add_argument("--out", default="scenes")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--recipe", action="append", metavar="SHAPE:OCC",
                   help="per-class recipe, repeat once per class")
    _add_config_flags(p, SynthConfig, skip=("seed", "recipes"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("mine", help="mine instances from scenes")
    p.add_argument("inputs", nargs="+", help="scene files or directories")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="mined")
    p.add_argument("--proposals", choices=PROPOSAL_TAGS, default="ground-truth")
    for cls in (MiningConfig, ScheduleConfig, PipelineConfig):
        _add_config_flags(p, cls)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("eval", help="mAP tables for mined instances")
    p.add_argument("inputs", nargs="+", help="scene files or directories with ground truth")
    p.add_argument("--pred", required=True, help="directory of .inst files")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--thresholds", type=float, nargs="+", default=list(DEFAULT_THRESHOLDS))
    p.add_argument("--out", help="write <out>.txt and <out>.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("occupancy", help="per-class occupancy of mined and ground-truth masks")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--pred", required=True)
    p.add_argument("--seed", type=int, default=0, help="must match the seed given to mine")
    p.add_argument("--proposals", choices=PROPOSAL_TAGS, default="ground-truth")
    p.add_argument("--out")
    _add_config_flags(p, PipelineConfig)
    p.set_defaults(func=cmd_occupancy)

    p = sub.add_parser("consistency", help="consistency loss for a scene under a perturbation")
    p.add_argument("scene")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--proposals", choices=PROPOSAL_TAGS, default="ground-truth")
    p.add_argument("--perturbed", help="proposal file predicted on the perturbed scene")
    p.add_argument("--theta", type=float)
    p.add_argument("--flip", type=int, choices=(-1, 1))
    p.add_argument("--jitter", type=float, default=0.02, help="jitter amplitude")
    _add_config_flags(p, ConsistencyConfig)
    p.set_defaults(func=cmd_consistency)

    p = sub.add_parser("grad-check", help="finite-difference audit of the loss gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--max-points", type=int, default=64)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (BoxMineError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
