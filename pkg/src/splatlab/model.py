"""Trainable Gaussian scene: parameters, activations, and density control.

Parameters are stored unconstrained and activated on use:
  * scale = exp(log_scale)           (always positive)
  * opacity = sigmoid(opacity_logit) (in (0, 1))
  * quaternion normalized on use
  * color clamped to [0, 1] at render time

A scene is a struct-of-arrays over n Gaussians plus per-Gaussian gradient
statistics used by density control.
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

SPLIT_SCALE_FACTOR = 1.6
SPLIT_CHILDREN = 2


class SceneParseError(ValueError):
    """Malformed scene file; carries the 1-based offending line number."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.line_no = line_no


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def inverse_sigmoid(y):
    y = np.asarray(y, dtype=float)
    return np.log(y / (1.0 - y))


def quat_to_rotation(q: np.ndarray) -> np.ndarray:
    """Rotation matrices from quaternions (w, x, y, z), shape (n,4) -> (n,3,3).

    Quaternions are normalized here; a zero quaternion is rejected.
    """
    q = np.asarray(q, dtype=float)
    squeeze = q.ndim == 1
    q = np.atleast_2d(q)
    norm = np.linalg.norm(q, axis=1)
    if np.any(norm == 0):
        raise ValueError("zero quaternion has no orientation")
    w, x, y, z = (q / norm[:, None]).T
    R = np.empty((q.shape[0], 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R[0] if squeeze else R


def covariance_from(log_scale, q) -> np.ndarray:
    """3x3 covariance from factors: Sigma = (R S)(R S)^T.

    R comes from the (normalized) quaternion and S = diag(exp(log_scale)),
    so the result is symmetric positive semidefinite by construction with
    eigenvalues exp(log_scale)^2.
    """
    s = np.exp(np.asarray(log_scale, dtype=float).reshape(3))
    R = quat_to_rotation(np.asarray(q, dtype=float).reshape(4))
    N = R * s[None, :]
    return N @ N.T


@dataclass
class Gaussian:
    """Single-record view of one Gaussian's raw (pre-activation) parameters."""

    mean: np.ndarray           # (3,)
    log_scale: np.ndarray      # (3,)
    quat: np.ndarray           # (4,) w, x, y, z
    color: np.ndarray          # (3,) unbounded; clamped to [0,1] at render
    opacity_logit: float

    def covariance(self) -> np.ndarray:
        return covariance_from(self.log_scale, self.quat)

    def opacity(self) -> float:
        return float(sigmoid(np.array(self.opacity_logit)))


@dataclass
class DensifyReport:
    """Outcome of one densify/prune pass.

    ``source_index`` maps each surviving row to its progenitor row in the
    pre-pass scene, or -1 for freshly created rows (clones and split
    children); optimizer state follows this map.
    """

    cloned: int
    split: int
    pruned: int
    source_index: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))


class Scene:
    """Ordered Gaussian set with per-Gaussian gradient statistics."""

    PARAMS = ("means", "log_scales", "quats", "colors", "opacity_logits")

    def __init__(self, means, log_scales, quats, colors, opacity_logits, extent):
        self.means = np.asarray(means, dtype=float).reshape(-1, 3)
        n = len(self.means)
        self.log_scales = np.asarray(log_scales, dtype=float).reshape(n, 3)
        self.quats = np.asarray(quats, dtype=float).reshape(n, 4)
        self.colors = np.asarray(colors, dtype=float).reshape(n, 3)
        self.opacity_logits = np.asarray(opacity_logits, dtype=float).reshape(n)
        self.extent = float(extent)
        if self.extent <= 0:
            raise ValueError("scene extent must be positive")
        self.reset_grad_stats()

    def __len__(self):
        return len(self.means)

    def reset_grad_stats(self):
        self.grad_accum = np.zeros(len(self), dtype=float)
        self.grad_count = np.zeros(len(self), dtype=float)

    def copy(self) -> "Scene":
        out = Scene(self.means.copy(), self.log_scales.copy(), self.quats.copy(),
                    self.colors.copy(), self.opacity_logits.copy(), self.extent)
        out.grad_accum = self.grad_accum.copy()
        out.grad_count = self.grad_count.copy()
        return out

    def set_from(self, other: "Scene"):
        """Restore this scene's full state from a snapshot, in place."""
        for p in self.PARAMS:
            setattr(self, p, getattr(other, p).copy())
        self.extent = other.extent
        self.grad_accum = other.grad_accum.copy()
        self.grad_count = other.grad_count.copy()

    def gaussian(self, i: int) -> Gaussian:
        return Gaussian(self.means[i].copy(), self.log_scales[i].copy(),
                        self.quats[i].copy(), self.colors[i].copy(),
                        float(self.opacity_logits[i]))

    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    def allclose(self, other: "Scene", rtol=0.0, atol=0.0) -> bool:
        return len(self) == len(other) and all(
            np.allclose(getattr(self, p), getattr(other, p), rtol=rtol, atol=atol)
            for p in self.PARAMS)


def init_random(n: int, extent: float, seed: int) -> Scene:
    """Random scene: means uniform in the cube [-extent, extent]^3.

    Colors start strictly inside (0, 1) so the render-time clamp never
    zeroes their gradients at initialization.
    """
    if n < 1:
        raise ValueError("need at least one Gaussian")
    rng = np.random.default_rng(seed)
    means = rng.uniform(-extent, extent, size=(n, 3))
    log_scales = np.log(rng.uniform(0.05, 0.15, size=(n, 3)) * extent)
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    colors = rng.uniform(0.1, 0.9, size=(n, 3))
    opacity_logits = np.full(n, inverse_sigmoid(0.5))
    return Scene(means, log_scales, quats, colors, opacity_logits, extent)


def accumulate_grad_stats(scene: Scene, mean2d_grad_norms, visible):
    """Fold one render's 2D-mean gradient norms into the running stats.

    Only Gaussians touched by the last render (``visible``) accumulate;
    the densifier later thresholds the running mean of these norms.
    """
    norms = np.asarray(mean2d_grad_norms, dtype=float)
    vis = np.asarray(visible, dtype=bool)
    if norms.shape != (len(scene),) or vis.shape != (len(scene),):
        raise ValueError(f"stats length {norms.shape} does not match scene size {len(scene)}")
    scene.grad_accum[vis] += norms[vis]
    scene.grad_count[vis] += 1.0


def densify_and_prune(scene: Scene, tau_g: float, tau_alpha: float,
                      percent_dense: float, rng: np.random.Generator) -> DensifyReport:
    """Adaptive density control: clone small / split large high-gradient
    Gaussians, then remove low-opacity ones.

    High gradient means running-mean 2D gradient norm > tau_g. Small vs
    large compares max activated scale against percent_dense * extent.
    Split children get scale / 1.6 and means sampled from the parent's own
    distribution; the parent is removed. Statistics reset afterwards.
    """
    n = len(scene)
    if n == 0:
        return DensifyReport(0, 0, 0, np.empty(0, dtype=int))

    mean_grad = np.divide(scene.grad_accum, scene.grad_count,
                          out=np.zeros(n), where=scene.grad_count > 0)
    over = mean_grad > tau_g
    max_scale = scene.scales().max(axis=1)
    limit = percent_dense * scene.extent
    clone_mask = over & (max_scale < limit)
    split_mask = over & (max_scale >= limit)

    keep = ~split_mask  # split parents are replaced by their children
    parts = {p: [getattr(scene, p)[keep]] for p in Scene.PARAMS}
    source = [np.flatnonzero(keep)]

    n_clone = int(clone_mask.sum())
    if n_clone:
        for p in Scene.PARAMS:
            parts[p].append(getattr(scene, p)[clone_mask])
        source.append(np.full(n_clone, -1, dtype=int))

    n_split = int(split_mask.sum())
    if n_split:
        idx = np.flatnonzero(split_mask)
        cov_factors = quat_to_rotation(scene.quats[idx]) * scene.scales()[idx][:, None, :]
        for _ in range(SPLIT_CHILDREN):
            z = rng.standard_normal((n_split, 3))
            child_means = scene.means[idx] + np.einsum("nij,nj->ni", cov_factors, z)
            parts["means"].append(child_means)
            parts["log_scales"].append(scene.log_scales[idx] - math.log(SPLIT_SCALE_FACTOR))
            parts["quats"].append(scene.quats[idx])
            parts["colors"].append(scene.colors[idx])
            parts["opacity_logits"].append(scene.opacity_logits[idx])
            source.append(np.full(n_split, -1, dtype=int))

    merged = {p: np.concatenate(parts[p]) for p in Scene.PARAMS}
    source = np.concatenate(source)

    alpha = sigmoid(merged["opacity_logits"])
    alive = alpha >= tau_alpha
    n_pruned = int((~alive).sum())

    scene.means = merged["means"][alive]
    scene.log_scales = merged["log_scales"][alive]
    scene.quats = merged["quats"][alive]
    scene.colors = merged["colors"][alive]
    scene.opacity_logits = merged["opacity_logits"][alive]
    scene.reset_grad_stats()
    return DensifyReport(n_clone, n_split, n_pruned, source[alive])


# Scene file format: line 1 is the Gaussian count; each following line has
# 14 space-separated reals (mean x3, log_scale x3, quat x4, color x3,
# opacity_logit). Values are written with shortest round-trip decimal
# representation so save -> load reproduces float64 values bit-exactly.

def save_scene(scene: Scene, path):
    rows = np.hstack([scene.means, scene.log_scales, scene.quats,
                      scene.colors, scene.opacity_logits[:, None]])
    lines = [str(len(scene))]
    lines.extend(" ".join(repr(float(v)) for v in row) for row in rows)
    _atomic_write_text(path, "\n".join(lines) + "\n")


def load_scene(path, extent: float | None = None) -> Scene:
    """Parse a scene file; extent is re-derived from the means unless given."""
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise SceneParseError(path, 1, "empty file, expected Gaussian count")
    try:
        count = int(lines[0])
    except ValueError:
        raise SceneParseError(path, 1, f"expected integer count, got {lines[0]!r}") from None
    if count < 0:
        raise SceneParseError(path, 1, f"negative count {count}")
    rows = np.empty((count, 14))
    for i in range(count):
        line_no = i + 2
        if line_no > len(lines) or not lines[line_no - 1].strip():
            raise SceneParseError(path, line_no,
                                  f"file truncated: expected {count} Gaussians")
        fields = lines[line_no - 1].split()
        if len(fields) != 14:
            raise SceneParseError(path, line_no,
                                  f"expected 14 values, got {len(fields)}")
        try:
            rows[i] = [float(f) for f in fields]
        except ValueError:
            raise SceneParseError(path, line_no, "non-numeric value") from None
    if extent is None:
        if count:
            centroid = rows[:, :3].mean(axis=0)
            extent = max(float(np.linalg.norm(rows[:, :3] - centroid, axis=1).max()), 1e-6)
        else:
            extent = 1.0
    return Scene(rows[:, 0:3], rows[:, 3:6], rows[:, 6:10], rows[:, 10:13],
                 rows[:, 13], extent)


def _atomic_write_text(path, text):
    """Write-then-rename so interrupted runs never leave truncated files."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", encoding="ascii") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
