"""Command-line front end.

Exit codes: 0 success, 1 domain failure (rejected generation, validation
findings), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .assets import AssetError, load_instances, validate_assets
from .batch import generate_dataset, load_models
from .config import ConfigError, describe_defaults, load_config
from .evaluate import EvaluationError, evaluate_manifests, format_report
from .imageio import read_environment, write_depth16
from .pipeline import DatasetManifest, PlanError
from .raster import rasterize_depth

log = logging.getLogger("vussynth")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _add_config_flags(p):
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path)
    p.add_argument("--samples", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--policy")
    p.add_argument("--instances", type=Path)
    p.add_argument("--env-map", type=Path)
    p.add_argument("--asset", action="append", metavar="ID=MESH,PARTS",
                   help="mesh id with OBJ and part-spec paths (repeatable; replaces config assets)")
    p.add_argument("--bilateral", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--sigma-s", type=float)
    p.add_argument("--sigma-r", type=float)
    p.add_argument("--neighbors", type=int, dest="neighbor_count")
    p.add_argument("--holefill-variant", choices=("squared", "plain"))
    p.add_argument("--gray", type=float)
    p.add_argument("--recolor-alpha", type=float)
    p.add_argument("--rounding", choices=("floor", "nearest"))
    p.add_argument("--map-threshold", type=float)


OVERRIDE_KEYS = ("seed", "out", "samples", "jobs", "policy", "instances", "env_map", "bilateral",
                 "sigma_s", "sigma_r", "neighbor_count", "holefill_variant", "gray",
                 "recolor_alpha", "rounding", "map_threshold")


def _config(args):
    overrides = {k: getattr(args, k, None) for k in OVERRIDE_KEYS}
    if getattr(args, "asset", None):
        assets = {}
        for spec in args.asset:
            try:
                mid, paths = spec.split("=", 1)
                mesh, parts = paths.split(",", 1)
            except ValueError:
                raise ConfigError(f"--asset {spec!r}: expected ID=MESH,PARTS") from None
            assets[mid] = {"mesh": mesh, "parts": parts}
        overrides["assets"] = assets
    return load_config(args.config, overrides)


def _load_scene(cfg):
    cfg.require("assets", "instances")
    cfg.check_files()
    try:
        instances = load_instances(cfg.instances)
        models = load_models(cfg.assets)
    except (AssetError, OSError, json.JSONDecodeError) as e:
        raise ConfigError(str(e)) from None
    for inst in instances:
        if inst.mesh_id not in models:
            raise ConfigError(f"instances: {inst.id} uses mesh {inst.mesh_id!r} missing from assets")
    return instances, models


def cmd_augment(args) -> int:
    cfg = _config(args)
    cfg.require("out")
    instances, models = _load_scene(cfg)
    try:
        env = read_environment(cfg.env_map) if cfg.env_map else None
    except (OSError, ValueError) as e:
        raise ConfigError(f"env_map: {e}") from None
    try:
        manifest = generate_dataset(instances, models, cfg.plan_policy(), cfg.seed, cfg.out, env,
                                    cfg.augment_config(), cfg.jobs)
    except (PlanError, OSError) as e:
        log.error("generation failed: %s", e)
        return EXIT_FAIL
    n, r = len(manifest.samples), len(manifest.rejections)
    print(f"augment: {n} samples, {r} rejected -> {cfg.out / 'manifest.json'}")
    return EXIT_FAIL if n == 0 and r > 0 else EXIT_OK


def cmd_render_depth(args) -> int:
    cfg = _config(args)
    instances, models = _load_scene(cfg)
    by_id = {i.id: i for i in instances}
    if args.instance not in by_id:
        raise UsageError(f"unknown instance {args.instance!r}; have {sorted(by_id)}")
    inst = by_id[args.instance]
    model = models[inst.mesh_id]
    if args.part not in model.part_map and args.part != "body":
        raise UsageError(f"unknown part {args.part!r}; have {sorted(model.part_map)}")
    w, h = inst.image_size
    d = rasterize_depth(model.mesh, {args.part}, inst.pose, inst.intrinsics, w, h)
    if not d.valid.any():
        log.warning("part %s of %s has an empty silhouette", args.part, inst.id)
    out = args.depth_out or (cfg.out or Path(".")) / f"{inst.id}_{args.part}_depth.png"
    write_depth16(out, d)
    print(f"render-depth: {int(d.valid.sum())} valid pixels -> {out}")
    return EXIT_OK


def _load_manifest(path: Path) -> DatasetManifest:
    try:
        return DatasetManifest.load(path)
    except (OSError, ValueError) as e:
        raise UsageError(f"{path}: {e}") from None


def cmd_eval(args) -> int:
    cfg = _config(args)
    gt = _load_manifest(args.gt)
    pred = _load_manifest(args.pred)
    try:
        report = evaluate_manifests(gt, args.gt.parent, pred, args.pred.parent, cfg.map_threshold)
    except EvaluationError as e:
        raise UsageError(str(e)) from None
    except OSError as e:
        log.error("evaluation failed: %s", e)
        return EXIT_FAIL
    print(format_report(report))
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _config(args)
    instances, models = _load_scene(cfg)
    failed = False
    for mid, model in models.items():
        insts = [i for i in instances if i.mesh_id == mid] or [None]
        for inst in insts:
            report = validate_assets(model.mesh, model.parts, inst)
            name = f"{mid}/{inst.id}" if inst else mid
            print(f"{name}: {report.format()}")
            failed |= not report.ok
    return EXIT_FAIL if failed else EXIT_OK


def cmd_inspect(args) -> int:
    m = _load_manifest(args.manifest)
    if args.sample is None:
        print(f"taxonomy {m.taxonomy_version}, generator {m.generator_version}: "
              f"{len(m.samples)} samples, {len(m.rejections)} rejected")
        for s in m.samples:
            print(f"{s.id}  bbox={s.bbox}  states={','.join(s.states) or '-'}")
        return EXIT_OK
    for s in m.samples:
        if s.id == args.sample:
            print(json.dumps({"id": s.id, "image": s.image, "bbox": s.bbox, "states": s.states,
                              "state": s.state, "instance_mask": s.instance_mask,
                              "part_mask": s.part_mask, "part_masks": s.part_masks,
                              "provenance": s.provenance}, indent=2))
            return EXIT_OK
    raise UsageError(f"no sample {args.sample!r} in {args.manifest}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vussynth", description=__doc__.splitlines()[0],
                                     epilog="configuration keys:\n" + describe_defaults(),
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("augment", help="synthesize a dataset")
    _add_config_flags(p)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("render-depth", help="dump one part's depth map as a 16-bit PNG")
    _add_config_flags(p)
    p.add_argument("--instance", required=True)
    p.add_argument("--part", required=True)
    p.add_argument("--depth-out", type=Path, help="output PNG (default: <out>/<instance>_<part>_depth.png)")
    p.set_defaults(func=cmd_render_depth)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("gt", type=Path, help="ground-truth manifest")
    p.add_argument("pred", type=Path, help="prediction manifest")
    p.add_argument("--report", type=Path, help="write the JSON report here")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("validate", help="check meshes, part specs and instances")
    _add_config_flags(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("inspect", help="print a manifest's annotations")
    p.add_argument("manifest", type=Path)
    p.add_argument("--sample")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
