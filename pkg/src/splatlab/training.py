"""Optimization: adaptive-moment updates, the shared phase loop, the
three-stage poisoning trainer, and the render-and-retrain baseline.

The three-stage trainer alternates per epoch:
  1. attack phase      - fit the attacker's target image at its viewpoint
  2. stabilization     - hold neighboring viewpoints to clean-model renders
  3. normal phase      - keep fitting the original training set

The baseline trainer instead snapshots the model each epoch, fits the
attack view under a constraint-view penalty, re-renders sampled training
images clipped to an epsilon-ball around the originals, restores the
snapshot, and retrains on the updated working dataset.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from splatlab.metrics import training_loss
from splatlab.model import Scene, accumulate_grad_stats, densify_and_prune
from splatlab.render import RenderGrads, render, render_backward
from splatlab.ves import AngleSet, ViewDataset, build_stab_dataset, ves_viewpoints

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-15
MEAN_LR_FINAL_FRACTION = 0.01

_GRAD_FIELDS = {
    "means": "d_means",
    "log_scales": "d_log_scales",
    "quats": "d_quats",
    "colors": "d_colors",
    "opacity_logits": "d_opacity_logits",
}


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    """All knobs for training and poisoning runs.

    Angle fields are degrees. ``densify_budget`` is the global optimizer
    step horizon: density control runs on its cadence until then, and the
    mean learning rate decays exponentially to 1% of its initial value
    over the same horizon.
    """

    lam: float = 0.2
    epochs: int = 2500
    t_attack: int = 25
    t_stab: int = 5
    t_normal: int = 5
    t_rerender: int = 5
    densify_budget: int = 100_000
    angles_deg: tuple = (13.0, 15.0)
    lr_mean: float = 1.6e-4
    lr_log_scale: float = 5e-3
    lr_quat: float = 1e-3
    lr_color: float = 2.5e-3
    lr_opacity: float = 5e-2
    tau_g: float = 2e-4
    tau_alpha: float = 0.005
    percent_dense: float = 0.01
    max_scale_factor: float = 2.0
    epsilon: float = 32.0 / 255.0
    baseline_angle_deg: float = 15.0
    seed: int = 0
    background: tuple = (1.0, 1.0, 1.0)
    densify_interval: int = 100
    densify_start: int = 500
    densify_all_phases: bool = True
    checkpoint_every: int = 0

    def validate(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lam must lie in [0, 1], got {self.lam}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        for name in ("epochs", "t_attack", "t_stab", "t_normal", "t_rerender",
                     "densify_budget", "densify_interval", "densify_start",
                     "checkpoint_every"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("lr_mean", "lr_log_scale", "lr_quat", "lr_color", "lr_opacity"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        AngleSet(tuple(self.angles_deg))
        return self

    def replace(self, **kw) -> "TrainConfig":
        return replace(self, **kw)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class AttackSpec:
    """Target viewpoints and the images the poisoned model must show there."""

    cameras: list
    images: list

    def __post_init__(self):
        if len(self.cameras) == 0:
            raise ValueError("attack spec needs at least one (camera, image) pair")
        if len(self.cameras) != len(self.images):
            raise ValueError(f"{len(self.cameras)} cameras vs {len(self.images)} images")
        for cam, img in zip(self.cameras, self.images):
            if img.shape != (cam.height, cam.width, 3):
                raise ValueError(f"attack image shape {img.shape} does not match "
                                 f"camera ({cam.height}, {cam.width}, 3)")


class AdamState:
    """First/second moment buffers aligned with the scene's parameter arrays."""

    def __init__(self, scene: Scene):
        self.step = 0
        self.m = {p: np.zeros_like(getattr(scene, p)) for p in Scene.PARAMS}
        self.v = {p: np.zeros_like(getattr(scene, p)) for p in Scene.PARAMS}

    def copy(self) -> "AdamState":
        out = AdamState.__new__(AdamState)
        out.step = self.step
        out.m = {p: a.copy() for p, a in self.m.items()}
        out.v = {p: a.copy() for p, a in self.v.items()}
        return out

    def set_from(self, other: "AdamState"):
        self.step = other.step
        self.m = {p: a.copy() for p, a in other.m.items()}
        self.v = {p: a.copy() for p, a in other.v.items()}

    def remap(self, source_index: np.ndarray):
        """Follow a densify/prune pass: survivors keep their moments, fresh
        Gaussians start from zero."""
        inherit = source_index >= 0
        src = source_index[inherit]
        for store in (self.m, self.v):
            for p, old in store.items():
                new = np.zeros((len(source_index),) + old.shape[1:])
                new[inherit] = old[src]
                store[p] = new


def optimizer_step(scene: Scene, grads: RenderGrads, state: AdamState,
                   config: TrainConfig):
    """One adaptive-moment update over all parameter groups.

    The mean group's rate follows the exponential decay schedule; the
    other groups use fixed rates.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - ADAM_BETA1 ** t
    bc2 = 1.0 - ADAM_BETA2 ** t
    if config.densify_budget > 0:
        frac = min(t, config.densify_budget) / config.densify_budget
        lr_mean = config.lr_mean * MEAN_LR_FINAL_FRACTION ** frac
    else:
        lr_mean = config.lr_mean
    rates = {
        "means": lr_mean,
        "log_scales": config.lr_log_scale,
        "quats": config.lr_quat,
        "colors": config.lr_color,
        "opacity_logits": config.lr_opacity,
    }
    for p in Scene.PARAMS:
        g = getattr(grads, _GRAD_FIELDS[p])
        m = state.m[p]
        v = state.v[p]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        update = rates[p] * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        getattr(scene, p)[...] -= update
    if config.max_scale_factor > 0:
        # unchecked growth lets single Gaussians swallow the image at
        # desk-scale resolutions; cap the world-space scale
        np.minimum(scene.log_scales,
                   np.log(config.max_scale_factor * scene.extent),
                   out=scene.log_scales)


def _sum_grads(a: RenderGrads, b: RenderGrads) -> RenderGrads:
    return RenderGrads(
        d_means=a.d_means + b.d_means,
        d_log_scales=a.d_log_scales + b.d_log_scales,
        d_quats=a.d_quats + b.d_quats,
        d_colors=a.d_colors + b.d_colors,
        d_opacity_logits=a.d_opacity_logits + b.d_opacity_logits,
        mean2d_grad_norm=a.mean2d_grad_norm + b.mean2d_grad_norm,
        visible=a.visible | b.visible,
    )


class Trainer:
    """Holds one scene, its optimizer state, and the shared phase loop."""

    def __init__(self, scene: Scene, config: TrainConfig,
                 rng: np.random.Generator | None = None):
        config.validate()
        self.scene = scene
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.opt = AdamState(scene)
        self.epoch = 0
        self.loss_log = []  # (epoch, phase, mean loss)

    @property
    def global_step(self) -> int:
        return self.opt.step

    def _densify_due(self) -> bool:
        c = self.config
        s = self.opt.step
        return (c.densify_interval > 0 and s > c.densify_start
                and s < c.densify_budget and s % c.densify_interval == 0)

    def _densify(self):
        report = densify_and_prune(self.scene, self.config.tau_g,
                                   self.config.tau_alpha,
                                   self.config.percent_dense, self.rng)
        self.opt.remap(report.source_index)
        return report

    def execute_phase(self, dataset: ViewDataset, n_iter: int,
                      phase: str = "train", densify: bool = True) -> float:
        """Run ``n_iter`` sampled optimization iterations; returns mean loss."""
        if n_iter <= 0:
            return float("nan")
        if len(dataset) == 0:
            raise ConfigError(f"phase {phase!r} has {n_iter} iterations but an "
                              "empty dataset")
        cfg = self.config
        losses = np.empty(n_iter)
        for it in range(n_iter):
            cam, target = dataset[int(self.rng.integers(len(dataset)))]
            image = render(self.scene, cam, cfg.background)
            value, d_image = training_loss(image, target, cfg.lam)
            grads = render_backward(self.scene, cam, cfg.background, d_image)
            optimizer_step(self.scene, grads, self.opt, cfg)
            accumulate_grad_stats(self.scene, grads.mean2d_grad_norm, grads.visible)
            if densify and self._densify_due():
                self._densify()
            losses[it] = value
        mean = float(losses.mean())
        self.loss_log.append((self.epoch, phase, mean))
        return mean


def train_clean(scene: Scene, train_set: ViewDataset, config: TrainConfig,
                n_steps: int, log_chunk: int = 100,
                epoch_callback=None) -> Trainer:
    """Fit a scene to a dataset for ``n_steps`` optimizer steps."""
    trainer = Trainer(scene, config)
    done = 0
    while done < n_steps:
        chunk = min(log_chunk, n_steps - done)
        trainer.epoch += 1
        trainer.execute_phase(train_set, chunk, phase="train")
        done += chunk
        if epoch_callback is not None:
            epoch_callback(trainer)
    return trainer


def _stab_cameras_for(attack: AttackSpec, angles: AngleSet):
    """Independent stabilization ensemble per attack camera, concatenated."""
    cams = []
    for cam in attack.cameras:
        cams.extend(ves_viewpoints(cam, angles))
    return cams


def poison_three_stage(scene: Scene, attack: AttackSpec, train_set: ViewDataset,
                       config: TrainConfig, epoch_callback=None) -> Trainer:
    """Implant the attack views with stabilized three-stage training.

    Builds the stabilization ground truth from the scene as passed in
    (the clean model), then mutates the scene in place over
    ``config.epochs`` epochs of attack / stabilization / normal phases.
    With an empty angle set this degrades to a two-phase loop.
    """
    config.validate()
    attack_set = ViewDataset(list(attack.cameras), list(attack.images))
    angles = AngleSet(tuple(config.angles_deg))
    stab_set = build_stab_dataset(scene, _stab_cameras_for(attack, angles),
                                  config.background)
    trainer = Trainer(scene, config)
    for epoch in range(1, config.epochs + 1):
        trainer.epoch = epoch
        trainer.execute_phase(attack_set, config.t_attack, "attack",
                              densify=config.densify_all_phases)
        if len(stab_set) > 0:
            trainer.execute_phase(stab_set, config.t_stab, "stabilization",
                                  densify=config.densify_all_phases)
        trainer.execute_phase(train_set, config.t_normal, "normal")
        if epoch_callback is not None:
            epoch_callback(trainer)
    return trainer


def poison_render_retrain(scene: Scene, attack: AttackSpec,
                          train_set: ViewDataset, config: TrainConfig,
                          epoch_callback=None) -> Trainer:
    """Baseline attack: per-epoch snapshot, attack+constraint fitting,
    epsilon-clipped dataset rewriting, restore, and retraining.

    The passed dataset is never mutated; updates land in a working copy.
    Every rewritten pixel stays within ``config.epsilon`` of the pristine
    image, then inside [0, 1]. Snapshots capture parameters and optimizer
    moments; restore reinstates both.
    """
    config.validate()
    attack_set = ViewDataset(list(attack.cameras), list(attack.images))
    constraint_set = build_stab_dataset(
        scene, _stab_cameras_for(attack, AngleSet((config.baseline_angle_deg,))),
        config.background)
    pristine = [img.copy() for img in train_set.images]
    working = ViewDataset(list(train_set.cameras),
                          [img.copy() for img in train_set.images])
    trainer = Trainer(scene, config)
    trainer.working_set = working
    cfg = config
    for epoch in range(1, cfg.epochs + 1):
        trainer.epoch = epoch
        scene_snapshot = scene.copy()
        opt_snapshot = trainer.opt.copy()

        # Phase 1: attack fitting under the constraint-view penalty
        if cfg.t_attack > 0 and (len(attack_set) == 0 or len(constraint_set) == 0):
            raise ConfigError("attack phase needs nonempty attack and constraint sets")
        atk_losses = np.empty(max(cfg.t_attack, 1))
        for it in range(cfg.t_attack):
            cam_a, target_a = attack_set[int(trainer.rng.integers(len(attack_set)))]
            image_a = render(scene, cam_a, cfg.background)
            loss_a, d_image_a = training_loss(image_a, target_a, cfg.lam)
            grads_a = render_backward(scene, cam_a, cfg.background, d_image_a)

            cam_c, target_c = constraint_set[int(trainer.rng.integers(len(constraint_set)))]
            image_c = render(scene, cam_c, cfg.background)
            loss_c, d_image_c = training_loss(image_c, target_c, cfg.lam)
            grads_c = render_backward(scene, cam_c, cfg.background, d_image_c)

            grads = _sum_grads(grads_a, grads_c)
            optimizer_step(scene, grads, trainer.opt, cfg)
            accumulate_grad_stats(scene, grads_a.mean2d_grad_norm, grads_a.visible)
            accumulate_grad_stats(scene, grads_c.mean2d_grad_norm, grads_c.visible)
            if trainer._densify_due():
                trainer._densify()
            atk_losses[it] = loss_a + loss_c
        if cfg.t_attack > 0:
            trainer.loss_log.append((epoch, "attack", float(atk_losses.mean())))

        # Phase 2: rewrite sampled training images within the epsilon ball
        for _ in range(cfg.t_rerender):
            i = int(trainer.rng.integers(len(working)))
            rendered = render(scene, working.cameras[i], cfg.background)
            clipped = np.clip(rendered, pristine[i] - cfg.epsilon,
                              pristine[i] + cfg.epsilon)
            working.images[i] = np.clip(clipped, 0.0, 1.0)

        scene.set_from(scene_snapshot)
        trainer.opt.set_from(opt_snapshot)

        # Phase 3: retrain on the updated working dataset
        trainer.execute_phase(working, cfg.t_normal, "normal")
        if epoch_callback is not None:
            epoch_callback(trainer)
    return trainer
