"""Toy-scene synthesis, camera rigs, image and dataset I/O.

On-disk formats:
  * camera manifests: one camera per line, 16 space-separated values in
    the order r00..r22 (row-major rotation), tx ty tz, width, height,
    fx, fy, cx, cy, near
  * datasets: a directory holding ``cameras.txt`` plus ``view_0000.png``,
    ``view_0001.png``, ... aligned with the manifest rows
  * images: 8-bit RGB PNG; pixel values are treated as linear in both
    directions (no gamma), metrics run on the decoded [0, 1] floats

All writes go through write-then-rename so interrupted runs never leave
truncated files behind.
"""

from __future__ import annotations

import json
import math
import os
import tempfile

import numpy as np
from PIL import Image as PILImage

from splatlab.geometry import Camera, look_at_camera
from splatlab.model import Scene, inverse_sigmoid
from splatlab.ves import ViewDataset

TOY_EXTENT = 1.5

# distinct saturated-ish anchors for toy clusters (kept strictly inside
# (0, 1) so render-time clamping never freezes color gradients)
_PALETTE = np.array([
    [0.85, 0.15, 0.15],
    [0.15, 0.70, 0.20],
    [0.15, 0.25, 0.85],
    [0.90, 0.80, 0.15],
    [0.75, 0.20, 0.80],
    [0.15, 0.75, 0.80],
    [0.90, 0.55, 0.15],
    [0.55, 0.35, 0.20],
])


BACKDROP_RADIUS_FACTOR = 2.6

# muted backdrop shades, distinct from the cluster palette
_BACKDROP_PALETTE = np.array([
    [0.55, 0.60, 0.70],
    [0.65, 0.58, 0.50],
    [0.50, 0.65, 0.58],
    [0.68, 0.66, 0.55],
])


def make_toy_scene(n: int = 200, seed: int = 0, n_clusters: int = 10,
                   extent: float = TOY_EXTENT,
                   backdrop_fraction: float = 0.25,
                   haze_fraction: float = 0.1) -> Scene:
    """Deterministic colored-blob arrangement used as the reference scene.

    A central multi-colored cluster arrangement (uneven radii and heights,
    so opposite viewpoints see different images) sits inside an enveloping
    shell of large soft blobs, with faint haze blobs scattered through the
    interior volume. The shell puts capacity behind every pixel of every
    hemisphere viewpoint, and the haze puts some in front of every camera,
    like the full backgrounds and participating media of real captures;
    image regions with no Gaussians along their rays are untrainable.
    Exactly ``n`` Gaussians are produced.
    """
    if n < 1:
        raise ValueError("need at least one Gaussian")
    rng = np.random.default_rng(seed)
    n_back = int(round(n * backdrop_fraction)) if n >= 8 else 0
    n_haze = int(round(n * haze_fraction)) if n >= 8 else 0
    n_obj = n - n_back - n_haze

    centers = np.empty((n_clusters, 3))
    for i in range(n_clusters):
        ang = 2.0 * math.pi * (i / n_clusters) + 0.35 * rng.uniform(-1, 1)
        rad = 0.55 * extent * (0.45 + 0.55 * rng.uniform())
        centers[i] = [rad * math.cos(ang), rad * math.sin(ang),
                      0.45 * extent * rng.uniform(-0.6, 1.0)]
    assign = rng.integers(0, n_clusters, size=n_obj)
    spread = 0.13 * extent
    means = centers[assign] + rng.normal(scale=spread, size=(n_obj, 3))
    log_scales = np.log(rng.uniform(0.03, 0.08, size=(n_obj, 3)) * extent)
    colors = np.clip(_PALETTE[assign % len(_PALETTE)]
                     + rng.normal(scale=0.13, size=(n_obj, 3)), 0.05, 0.95)
    opacities = np.full(n_obj, 0.85)

    if n_haze:
        # faint interior haze between the object and the backdrop shell
        r = extent * (1.2 + 1.0 * rng.uniform(size=n_haze) ** 0.5)
        direction = rng.normal(size=(n_haze, 3))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        haze_means = r[:, None] * direction
        haze_scales = np.log(rng.uniform(0.18, 0.30, size=(n_haze, 3)) * extent)
        haze_colors = np.clip(np.array([0.62, 0.64, 0.68])
                              + rng.normal(scale=0.06, size=(n_haze, 3)), 0.05, 0.95)
        means = np.concatenate([means, haze_means])
        log_scales = np.concatenate([log_scales, haze_scales])
        colors = np.concatenate([colors, haze_colors])
        opacities = np.concatenate([opacities, np.full(n_haze, 0.22)])

    if n_back:
        # Fibonacci-spiral points over the full sphere, lightly jittered
        radius = BACKDROP_RADIUS_FACTOR * extent
        i = np.arange(n_back)
        golden = math.pi * (3.0 - math.sqrt(5.0))
        zs = 1.0 - 2.0 * (i + 0.5) / n_back
        ring = np.sqrt(1.0 - zs ** 2)
        ang = golden * i
        shell = np.stack([ring * np.cos(ang), ring * np.sin(ang), zs], axis=1)
        shell = radius * shell + rng.normal(scale=0.05 * radius, size=(n_back, 3))
        spacing = math.sqrt(4.0 * math.pi * radius ** 2 / n_back)
        shell_scales = np.log(rng.uniform(0.55, 0.75, size=(n_back, 3)) * spacing)
        shell_colors = np.clip(_BACKDROP_PALETTE[i % len(_BACKDROP_PALETTE)]
                               + rng.normal(scale=0.04, size=(n_back, 3)), 0.05, 0.95)
        means = np.concatenate([means, shell])
        log_scales = np.concatenate([log_scales, shell_scales])
        colors = np.concatenate([colors, shell_colors])
        opacities = np.concatenate([opacities, np.full(n_back, 0.9)])

    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    return Scene(means, log_scales, quats, colors,
                 inverse_sigmoid(opacities), extent)


def checkerboard(width: int, height: int, tiles: int = 8,
                 dark=(0.1, 0.1, 0.1), light=(0.95, 0.95, 0.1)) -> np.ndarray:
    """High-contrast checkerboard, the stock attack target image."""
    ys, xs = np.mgrid[0:height, 0:width]
    mask = ((xs * tiles // width) + (ys * tiles // height)) % 2
    img = np.where(mask[:, :, None] == 0, np.asarray(dark, dtype=float),
                   np.asarray(light, dtype=float))
    return img


def hemisphere_cameras(count: int, radius: float, look_at, width: int,
                       height: int, fx: float, fy: float, seed: int,
                       min_elevation_deg: float = 15.0,
                       max_elevation_deg: float = 70.0) -> list[Camera]:
    """Cameras on the upper hemisphere, all aimed at ``look_at``."""
    if count < 1:
        raise ValueError("need at least one camera")
    if radius <= 0:
        raise ValueError("radius must be positive")
    target = np.asarray(look_at, dtype=float).reshape(3)
    rng = np.random.default_rng(seed)
    cams = []
    for _ in range(count):
        azimuth = rng.uniform(0.0, 2.0 * math.pi)
        elevation = math.radians(rng.uniform(min_elevation_deg, max_elevation_deg))
        direction = np.array([math.cos(elevation) * math.cos(azimuth),
                              math.cos(elevation) * math.sin(azimuth),
                              math.sin(elevation)])
        eye = target + radius * direction
        cams.append(look_at_camera(eye, target, width, height, fx, fy))
    return cams


def split_indices(count: int, n_train: int, n_test: int, n_attack: int,
                  seed: int, cameras=None):
    """Disjoint train/test/attack index assignment over ``count`` cameras.

    When the cameras are provided, attack viewpoints are chosen from the
    held-out pool greedily by angular clearance: each pick maximizes its
    minimum view-direction angle to all train/test cameras and earlier
    picks. Backdoors implanted right next to a supervised viewpoint are
    trivially damaged by normal training, so the trigger hides in the
    least-covered part of the view sphere.
    """
    if n_train + n_test + n_attack > count:
        raise ValueError(f"split {n_train}+{n_test}+{n_attack} exceeds {count} cameras")
    perm = np.random.default_rng(seed).permutation(count)
    train = np.sort(perm[:n_train])
    test = np.sort(perm[n_train:n_train + n_test])
    pool = perm[n_train + n_test:]
    if cameras is None or n_attack == 0:
        attack = np.sort(pool[:n_attack])
        return train, test, attack

    def direction(i):
        c = cameras[i].center
        return c / np.linalg.norm(c)
    anchors = [direction(i) for i in np.concatenate([train, test])]
    chosen = []
    remaining = list(pool)
    for _ in range(n_attack):
        best, best_clear = None, -1.0
        for c in remaining:
            d = direction(c)
            clear = min(float(np.degrees(np.arccos(np.clip(np.dot(d, a), -1, 1))))
                        for a in anchors)
            if clear > best_clear:
                best, best_clear = c, clear
        chosen.append(best)
        remaining.remove(best)
        anchors.append(direction(best))
    return train, test, np.sort(np.array(chosen))


# ---------------------------------------------------------------------------
# image files

def save_png(image: np.ndarray, path):
    """Encode an [0, 1] float image as 8-bit RGB PNG (atomic write)."""
    arr = np.asarray(image, dtype=float)
    data = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".png")
    try:
        with os.fdopen(fd, "wb") as fh:
            PILImage.fromarray(data, mode="RGB").save(fh, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_png(path) -> np.ndarray:
    """Decode a PNG into an (H, W, 3) float image in [0, 1]."""
    with PILImage.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=float) / 255.0


# ---------------------------------------------------------------------------
# camera manifests

_CAMERA_ROW_LEN = 19  # 9 rotation + 3 translation + w h fx fy cx cy near


def save_cameras(cameras, path):
    lines = []
    for cam in cameras:
        vals = list(cam.R.reshape(-1)) + list(cam.T) + [
            float(cam.width), float(cam.height), cam.fx, cam.fy,
            cam.cx, cam.cy, cam.near]
        lines.append(" ".join(repr(float(v)) for v in vals))
    _atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def load_cameras(path) -> list[Camera]:
    cams = []
    with open(path, "r", encoding="ascii") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            vals = [float(v) for v in line.split()]
            if len(vals) != _CAMERA_ROW_LEN:
                raise ValueError(f"{path}:{line_no}: expected {_CAMERA_ROW_LEN} "
                                 f"values, got {len(vals)}")
            cams.append(Camera(width=int(vals[12]), height=int(vals[13]),
                               fx=vals[14], fy=vals[15], cx=vals[16], cy=vals[17],
                               R=np.array(vals[0:9]).reshape(3, 3),
                               T=np.array(vals[9:12]), near=vals[18]))
    return cams


# ---------------------------------------------------------------------------
# datasets on disk

CAMERA_FILE = "cameras.txt"


def view_filename(i: int) -> str:
    return f"view_{i:04d}.png"


def render_dataset(scene: Scene, cameras, background, out_dir,
                   noise_sigma: float = 0.0, noise_seed: int = 0) -> ViewDataset:
    """Render every camera and write the dataset directory.

    ``noise_sigma`` adds clipped Gaussian sensor noise to the captured
    images (deterministic under ``noise_seed``), emulating the photometric
    noise floor of real captures.
    """
    from splatlab.render import render

    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(noise_seed)
    cameras = list(cameras)
    images = []
    for i, cam in enumerate(cameras):
        img = render(scene, cam, background)
        if noise_sigma > 0.0:
            img = np.clip(img + rng.normal(scale=noise_sigma, size=img.shape),
                          0.0, 1.0)
        save_png(img, os.path.join(out_dir, view_filename(i)))
        images.append(img)
    save_cameras(cameras, os.path.join(out_dir, CAMERA_FILE))
    return ViewDataset(cameras=cameras, images=images)


def load_dataset(path) -> ViewDataset:
    """Load a dataset directory written by render_dataset."""
    cam_path = os.path.join(path, CAMERA_FILE)
    if not os.path.exists(cam_path):
        raise FileNotFoundError(f"no camera manifest at {cam_path}")
    cameras = load_cameras(cam_path)
    images = []
    for i in range(len(cameras)):
        img_path = os.path.join(path, view_filename(i))
        if not os.path.exists(img_path):
            raise FileNotFoundError(f"dataset image missing: {img_path}")
        images.append(load_png(img_path))
    return ViewDataset(cameras=cameras, images=images)


# ---------------------------------------------------------------------------
# synthetic-NeRF layout loader

def load_nerf_synthetic(path) -> tuple[list[Camera], list[np.ndarray]]:
    """Read a directory in the widely used synthetic-NeRF layout.

    Expects a ``transforms.json`` (or ``transforms_train.json``) with
    ``camera_angle_x`` (horizontal field of view, radians) and per-frame
    4x4 camera-to-world matrices plus adjacent image files. Camera-to-world
    matrices are inverted to world-to-camera as-is; no axis convention is
    changed on the way in.
    """
    transforms = None
    for name in ("transforms.json", "transforms_train.json"):
        candidate = os.path.join(path, name)
        if os.path.exists(candidate):
            transforms = candidate
            break
    if transforms is None:
        raise FileNotFoundError(f"no transforms file found under {path}")
    with open(transforms, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    if "camera_angle_x" not in meta:
        raise ValueError(f"{transforms}: missing camera_angle_x")
    fov_x = float(meta["camera_angle_x"])
    cameras = []
    images = []
    for idx, frame in enumerate(meta.get("frames", [])):
        file_path = frame.get("file_path")
        if file_path is None:
            raise ValueError(f"frame {idx}: missing file_path")
        img_path = os.path.join(path, file_path)
        if not os.path.splitext(img_path)[1]:
            img_path += ".png"
        if not os.path.exists(img_path):
            raise FileNotFoundError(f"frame {idx}: image not found: {img_path}")
        image = load_png(img_path)
        h, w = image.shape[:2]
        c2w = np.asarray(frame.get("transform_matrix"), dtype=float)
        if c2w.shape != (4, 4):
            raise ValueError(f"frame {idx}: transform_matrix is not 4x4")
        w2c = np.linalg.inv(c2w)
        fx = 0.5 * w / math.tan(0.5 * fov_x)
        cameras.append(Camera(width=w, height=h, fx=fx, fy=fx,
                              cx=w / 2.0, cy=h / 2.0,
                              R=w2c[:3, :3], T=w2c[:3, 3]))
        images.append(image)
    return cameras, images


def _atomic_write_text(path, text):
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
