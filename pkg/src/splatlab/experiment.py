"""End-to-end experiment pipeline: manifest -> training -> four-group reports.

An experiment evaluates a (possibly poisoned) scene from four viewpoint
groups, each scored against its own ground truth:

  attack        - renders at the attack viewpoints vs the attack images
  train / test  - renders at dataset viewpoints vs the dataset images
  stabilization - renders at the ensemble viewpoints vs clean-model renders

Outputs land in the manifest's output directory: the trained scene file,
optional epoch checkpoints, a per-epoch loss CSV, one metrics CSV per
group, a summary CSV, and comparison renders laid out in three rows
(poisoned / clean / target).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from splatlab import datasets as dio
from splatlab.geometry import Camera
from splatlab.metrics import MetricsReport, evaluate_group
from splatlab.model import Scene, init_random, load_scene, save_scene
from splatlab.render import render
from splatlab.training import (AttackSpec, TrainConfig, Trainer,
                               poison_render_retrain, poison_three_stage,
                               train_clean)
from splatlab.ves import AngleSet, ViewDataset, ves_viewpoints

GROUPS = ("attack", "train", "test", "stabilization")

TRAINERS = ("clean", "poison", "poison-baseline", "none")


class ManifestError(ValueError):
    pass


@dataclass
class ExperimentManifest:
    """Everything one run needs: input paths, config, and output directory."""

    out_dir: str
    trainer: str = "poison"
    scene: str = ""            # initial/clean scene file ("" = random init)
    clean_scene: str = ""      # reference model for stabilization targets;
                               # defaults to the pre-training state of ``scene``
    train_dir: str = ""
    test_dir: str = ""
    attack_cameras: str = ""   # camera manifest with one row per backdoor
    attack_images: tuple = ()  # PNG paths; length 1 broadcasts
    clean_steps: int = 5000
    init_gaussians: int = 200
    config: TrainConfig = field(default_factory=TrainConfig)

    def validate(self):
        if self.trainer not in TRAINERS:
            raise ManifestError(f"unknown trainer {self.trainer!r}; expected one of {TRAINERS}")
        if not self.out_dir:
            raise ManifestError("out_dir is required")
        needs_attack = self.trainer in ("poison", "poison-baseline", "none")
        for name, path in (("scene", self.scene),
                           ("clean_scene", self.clean_scene),
                           ("train_dir", self.train_dir),
                           ("test_dir", self.test_dir),
                           ("attack_cameras", self.attack_cameras)):
            required = (name == "train_dir"
                        or (name == "scene" and self.trainer != "clean")
                        or (name in ("attack_cameras",) and needs_attack))
            if required and not path:
                raise ManifestError(f"{name} is required for trainer {self.trainer!r}")
            if path and not os.path.exists(path):
                raise ManifestError(f"{name}: no such path: {path}")
        if needs_attack:
            if not self.attack_images:
                raise ManifestError(f"attack_images required for trainer {self.trainer!r}")
            for p in self.attack_images:
                if not os.path.exists(p):
                    raise ManifestError(f"attack image not found: {p}")
        self.config.validate()
        return self


def load_attack_spec(manifest: ExperimentManifest) -> AttackSpec:
    cams = dio.load_cameras(manifest.attack_cameras)
    image_paths = list(manifest.attack_images)
    if len(image_paths) == 1 and len(cams) > 1:
        image_paths = image_paths * len(cams)
    if len(image_paths) != len(cams):
        raise ManifestError(f"{len(cams)} attack cameras but "
                            f"{len(image_paths)} attack images")
    images = [dio.load_png(p) for p in image_paths]
    return AttackSpec(cameras=cams, images=images)


def stabilization_cameras(attack_cams, angles: AngleSet) -> list[Camera]:
    cams = []
    for cam in attack_cams:
        cams.extend(ves_viewpoints(cam, angles))
    return cams


def write_metrics_csv(report: MetricsReport, path):
    lines = ["group,view_id,psnr_db,ssim"]
    for group, vid, p, s in report.rows():
        lines.append(f"{group},{vid},{p:.9f},{s:.9f}")
    dio._atomic_write_text(path, "\n".join(lines) + "\n")


def write_loss_csv(loss_log, path):
    lines = ["epoch,phase,mean_loss"]
    for epoch, phase, value in loss_log:
        lines.append(f"{epoch},{phase},{value:.12g}")
    dio._atomic_write_text(path, "\n".join(lines) + "\n")


def write_summary_csv(reports: dict, path):
    lines = ["group,views,mean_psnr_db,mean_ssim"]
    for group in GROUPS:
        r = reports[group]
        if len(r):
            lines.append(f"{group},{len(r)},{r.mean_psnr:.9f},{r.mean_ssim:.9f}")
        else:
            lines.append(f"{group},0,,")
    dio._atomic_write_text(path, "\n".join(lines) + "\n")


def evaluate_scene(scene: Scene, clean_scene: Scene, attack: AttackSpec | None,
                   train_set: ViewDataset, test_set: ViewDataset | None,
                   config: TrainConfig) -> dict:
    """Four-group evaluation; returns {group: MetricsReport}."""
    bg = config.background
    reports = {}
    if attack is not None:
        reports["attack"] = evaluate_group(scene, attack.cameras, attack.images,
                                           "attack", bg)
        stab_cams = stabilization_cameras(attack.cameras,
                                          AngleSet(tuple(config.angles_deg)))
        stab_targets = [render(clean_scene, c, bg) for c in stab_cams]
        reports["stabilization"] = evaluate_group(scene, stab_cams, stab_targets,
                                                  "stabilization", bg)
    else:
        reports["attack"] = MetricsReport(group="attack")
        reports["stabilization"] = MetricsReport(group="stabilization")
    reports["train"] = evaluate_group(scene, train_set.cameras, train_set.images,
                                      "train", bg)
    if test_set is not None and len(test_set):
        reports["test"] = evaluate_group(scene, test_set.cameras, test_set.images,
                                         "test", bg)
    else:
        reports["test"] = MetricsReport(group="test")
    return reports


def write_comparisons(out_dir, scene: Scene, clean_scene: Scene,
                      attack: AttackSpec | None, train_set: ViewDataset,
                      config: TrainConfig, n_normal_views: int = 3):
    """Three-row comparison renders: poisoned / clean / target."""
    bg = config.background
    columns = []  # (name, poisoned, clean, target)
    if attack is not None:
        for i, (cam, target) in enumerate(zip(attack.cameras, attack.images)):
            columns.append((f"attack_view_{i}", render(scene, cam, bg),
                            render(clean_scene, cam, bg), target))
    step = max(1, len(train_set) // max(1, n_normal_views))
    for j in list(range(0, len(train_set), step))[:n_normal_views]:
        cam, target = train_set[j]
        columns.append((f"normal_view_{j}", render(scene, cam, bg),
                        render(clean_scene, cam, bg), target))
    for name, poisoned, clean, target in columns:
        dio.save_png(poisoned, os.path.join(out_dir, f"{name}_poisoned.png"))
        dio.save_png(clean, os.path.join(out_dir, f"{name}_clean.png"))
        dio.save_png(target, os.path.join(out_dir, f"{name}_target.png"))
    shapes = {img.shape for _, p, c, t in columns for img in (p, c, t)}
    if columns and len(shapes) == 1:
        rows = [np.concatenate([col[k] for col in columns], axis=1)
                for k in (1, 2, 3)]
        dio.save_png(np.concatenate(rows, axis=0),
                     os.path.join(out_dir, "comparison.png"))


def run_experiment(manifest: ExperimentManifest) -> str:
    """Execute the manifest's trainer and write the full report directory."""
    manifest.validate()
    cfg = manifest.config
    out_dir = manifest.out_dir
    os.makedirs(out_dir, exist_ok=True)

    def stage(name, fn):
        try:
            return fn()
        except Exception as exc:
            raise RuntimeError(f"experiment stage {name!r} failed: {exc}") from exc

    train_set = stage("load-train", lambda: dio.load_dataset(manifest.train_dir))
    test_set = (stage("load-test", lambda: dio.load_dataset(manifest.test_dir))
                if manifest.test_dir else None)
    attack = (stage("load-attack", lambda: load_attack_spec(manifest))
              if manifest.attack_cameras else None)

    if manifest.scene:
        scene = stage("load-scene", lambda: load_scene(manifest.scene))
    else:
        cam0 = train_set.cameras[0]
        extent = float(np.linalg.norm(cam0.center)) / 2.0
        scene = init_random(manifest.init_gaussians, max(extent, 1e-3), cfg.seed)
    if manifest.clean_scene:
        clean_scene = stage("load-clean", lambda: load_scene(manifest.clean_scene))
    else:
        clean_scene = scene.copy()

    checkpoints_dir = os.path.join(out_dir, "checkpoints")

    def on_epoch(trainer: Trainer):
        k = cfg.checkpoint_every
        if k > 0 and trainer.epoch % k == 0:
            os.makedirs(checkpoints_dir, exist_ok=True)
            save_scene(trainer.scene,
                       os.path.join(checkpoints_dir, f"epoch_{trainer.epoch:05d}.txt"))

    trainer = None
    if manifest.trainer == "clean":
        trainer = stage("train", lambda: train_clean(
            scene, train_set, cfg, manifest.clean_steps, epoch_callback=on_epoch))
    elif manifest.trainer == "poison":
        trainer = stage("train", lambda: poison_three_stage(
            scene, attack, train_set, cfg, epoch_callback=on_epoch))
    elif manifest.trainer == "poison-baseline":
        trainer = stage("train", lambda: poison_render_retrain(
            scene, attack, train_set, cfg, epoch_callback=on_epoch))

    stage("save-scene", lambda: save_scene(
        scene, os.path.join(out_dir, "scene.txt")))
    if trainer is not None:
        stage("loss-log", lambda: write_loss_csv(
            trainer.loss_log, os.path.join(out_dir, "losses.csv")))

    reports = stage("evaluate", lambda: evaluate_scene(
        scene, clean_scene, attack, train_set, test_set, cfg))
    for group in GROUPS:
        stage("metrics-csv", lambda g=group: write_metrics_csv(
            reports[g], os.path.join(out_dir, f"metrics_{g}.csv")))
    stage("summary", lambda: write_summary_csv(
        reports, os.path.join(out_dir, "summary.csv")))
    stage("comparisons", lambda: write_comparisons(
        out_dir, scene, clean_scene, attack, train_set, cfg))
    return out_dir
