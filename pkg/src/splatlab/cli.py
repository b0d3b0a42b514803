"""Command-line interface.

Subcommands: make-scene, make-cameras, render-dataset, train-clean,
poison, poison-baseline, eval, ves-preview. Training knobs come from an
optional plain-text key=value config file, overridden by flags; every
TrainConfig field is addressable by a flag of the same name (underscores
become hyphens).
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import fields

import numpy as np

from splatlab import datasets as dio
from splatlab.experiment import ExperimentManifest, run_experiment
from splatlab.geometry import Camera
from splatlab.model import load_scene, save_scene
from splatlab.training import TrainConfig
from splatlab.ves import AngleSet, generate_offsets, ves_viewpoints


def parse_background(text):
    name = text.strip().lower()
    if name == "white":
        return (1.0, 1.0, 1.0)
    if name == "black":
        return (0.0, 0.0, 0.0)
    parts = [p for p in name.split(",") if p]
    if len(parts) != 3:
        raise ValueError(f"background must be white, black, or r,g,b; got {text!r}")
    return tuple(float(p) for p in parts)


def parse_config_file(path) -> dict:
    """Plain-text ``key = value`` pairs; '#' starts a comment."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{line_no}: expected key = value")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _convert_field(name: str, value):
    if not isinstance(value, str):
        return value
    if name == "angles_deg":
        return AngleSet.parse(value).degrees
    if name == "background":
        return parse_background(value)
    if name == "densify_all_phases":
        return value.strip().lower() in ("1", "true", "yes", "on")
    ftype = _FIELD_TYPES[name]
    if ftype in ("int", int):
        return int(value)
    return float(value)


def build_config(args) -> TrainConfig:
    values = {}
    if getattr(args, "config", None):
        raw = parse_config_file(args.config)
        for key, value in raw.items():
            if key not in _FIELD_TYPES:
                raise ValueError(f"unknown config key {key!r}")
            values[key] = _convert_field(key, value)
    for name in _FIELD_TYPES:
        v = getattr(args, f"cfg_{name}", None)
        if v is not None:
            values[name] = _convert_field(name, v)
    return TrainConfig(**values).validate()


_FLAG_ALIASES = {
    "lam": ["--lambda"],
    "t_attack": ["--ta"],
    "t_stab": ["--ts"],
    "t_normal": ["--tt"],
    "t_rerender": ["--tr"],
    "angles_deg": ["--angles"],
}


def add_config_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", metavar="PATH",
                        help="key=value config file (flags override)")
    group = parser.add_argument_group("training config")
    for name in _FIELD_TYPES:
        flags = [f"--{name.replace('_', '-')}"] + _FLAG_ALIASES.get(name, [])
        group.add_argument(*flags, dest=f"cfg_{name}", default=None,
                           metavar="V", help=f"TrainConfig.{name}")


def _fov_to_focal(fov_deg: float, pixels: int) -> float:
    return 0.5 * pixels / math.tan(0.5 * math.radians(fov_deg))


def cmd_make_scene(args):
    scene = dio.make_toy_scene(n=args.n, seed=args.seed,
                               n_clusters=args.clusters, extent=args.extent)
    save_scene(scene, args.out)
    print(f"wrote {args.out}: {len(scene)} Gaussians, extent {scene.extent}")


def cmd_make_cameras(args):
    look_at = tuple(float(v) for v in args.look_at.split(","))
    count = args.train + args.test + args.attack
    fx = _fov_to_focal(args.fov_deg, args.width)
    cams = dio.hemisphere_cameras(count, args.radius, look_at,
                                  args.width, args.height, fx, fx, args.seed)
    train_idx, test_idx, attack_idx = dio.split_indices(
        count, args.train, args.test, args.attack, args.seed)
    os.makedirs(args.out, exist_ok=True)
    for name, idx in (("train", train_idx), ("test", test_idx),
                      ("attack", attack_idx)):
        path = os.path.join(args.out, f"{name}_cameras.txt")
        dio.save_cameras([cams[i] for i in idx], path)
        print(f"wrote {path}: {len(idx)} cameras")


def cmd_render_dataset(args):
    scene = load_scene(args.scene)
    cams = dio.load_cameras(args.cameras)
    dio.render_dataset(scene, cams, parse_background(args.background), args.out)
    print(f"wrote {args.out}: {len(cams)} views")


def _experiment_from_args(args, trainer: str) -> ExperimentManifest:
    return ExperimentManifest(
        out_dir=args.out,
        trainer=trainer,
        scene=getattr(args, "scene", "") or "",
        clean_scene=getattr(args, "clean_scene", "") or "",
        train_dir=args.train,
        test_dir=getattr(args, "test", "") or "",
        attack_cameras=getattr(args, "attack_cameras", "") or "",
        attack_images=tuple(getattr(args, "attack_image", None) or ()),
        clean_steps=getattr(args, "steps", 5000),
        init_gaussians=getattr(args, "init_gaussians", 200),
        config=build_config(args),
    )


def cmd_train_clean(args):
    out = run_experiment(_experiment_from_args(args, "clean"))
    print(f"experiment complete: {out}")


def cmd_poison(args):
    out = run_experiment(_experiment_from_args(args, "poison"))
    print(f"experiment complete: {out}")


def cmd_poison_baseline(args):
    out = run_experiment(_experiment_from_args(args, "poison-baseline"))
    print(f"experiment complete: {out}")


def cmd_eval(args):
    out = run_experiment(_experiment_from_args(args, "none"))
    print(f"evaluation complete: {out}")


def cmd_ves_preview(args):
    cams = dio.load_cameras(args.camera)
    if not 0 <= args.index < len(cams):
        raise ValueError(f"camera index {args.index} out of range 0..{len(cams) - 1}")
    cam = cams[args.index]
    angles = AngleSet.parse(args.angles)
    offsets = generate_offsets(angles)
    views = ves_viewpoints(cam, angles)
    lines = [f"reference camera {args.index}: {len(views)} ensemble viewpoints "
             f"for angles {list(angles.degrees)} deg"]
    for (dt, dp), view in zip(offsets, views):
        lines.append(f"dtheta={dt:+.4f} deg  dphi={dp:+.4f} deg")
        for row in view.R:
            lines.append("  [" + "  ".join(f"{v: .12f}" for v in row) + "]")
        lines.append("  T = [" + "  ".join(f"{v: .12f}" for v in view.T) + "]")
    text = "\n".join(lines)
    if args.out:
        dio._atomic_write_text(args.out, text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatlab",
        description="Desk-scale Gaussian splatting engine and poisoning lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-scene", help="synthesize the toy reference scene")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--clusters", type=int, default=6)
    p.add_argument("--extent", type=float, default=dio.TOY_EXTENT)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_scene)

    p = sub.add_parser("make-cameras",
                       help="hemisphere camera rig with train/test/attack split")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--train", type=int, default=30)
    p.add_argument("--test", type=int, default=5)
    p.add_argument("--attack", type=int, default=1)
    p.add_argument("--radius", type=float, default=4.0)
    p.add_argument("--look-at", default="0,0,0")
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--fov-deg", type=float, default=50.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_cameras)

    p = sub.add_parser("render-dataset", help="render a camera rig to PNGs")
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--background", default="white")
    p.set_defaults(func=cmd_render_dataset)

    p = sub.add_parser("train-clean", help="fit a scene to a dataset")
    p.add_argument("--train", required=True, help="training dataset directory")
    p.add_argument("--test", help="held-out dataset directory")
    p.add_argument("--scene", help="initial scene file (default: random init)")
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--init-gaussians", type=int, default=200)
    p.add_argument("--out", required=True)
    add_config_flags(p)
    p.set_defaults(func=cmd_train_clean)

    for name, func, blurb in (
            ("poison", cmd_poison, "three-stage backdoor training"),
            ("poison-baseline", cmd_poison_baseline,
             "render-and-retrain baseline attack")):
        p = sub.add_parser(name, help=blurb)
        p.add_argument("--scene", required=True, help="clean (pre-trained) scene file")
        p.add_argument("--train", required=True)
        p.add_argument("--test")
        p.add_argument("--attack-cameras", required=True,
                       help="camera manifest, one row per backdoor")
        p.add_argument("--attack-image", action="append", required=True,
                       help="attack target PNG (repeat per backdoor; one broadcasts)")
        p.add_argument("--out", required=True)
        add_config_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="four-group evaluation of an existing scene")
    p.add_argument("--scene", required=True, help="scene file to evaluate")
    p.add_argument("--clean-scene", help="clean reference scene for "
                   "stabilization targets (default: the scene itself)")
    p.add_argument("--train", required=True)
    p.add_argument("--test")
    p.add_argument("--attack-cameras")
    p.add_argument("--attack-image", action="append")
    p.add_argument("--out", required=True)
    add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ves-preview",
                       help="dump the stabilization ensemble for a camera")
    p.add_argument("--camera", required=True, help="camera manifest file")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--angles", default="13,15")
    p.add_argument("--out", help="write to file instead of stdout")
    p.set_defaults(func=cmd_ves_preview)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
