"""Viewpoint ensemble stabilization (VES).

Around a reference camera, enumerate every pitch/yaw offset pair
(dtheta, dphi) in {-delta, 0, +delta}^2 minus (0, 0) for each angle delta
in the configured set, and rotate the camera by each pair. Supervising
these neighboring views with renders of the untouched model anchors the
scene around a tampered viewpoint.

Angles are degrees throughout this module; conversion to radians happens
at the single point where cameras are perturbed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from splatlab.geometry import Camera, perturb_camera
from splatlab.model import Scene


@dataclass(frozen=True)
class AngleSet:
    """Perturbation magnitudes in degrees; empty disables stabilization."""

    degrees: tuple = ()

    def __post_init__(self):
        for d in self.degrees:
            if not 0.0 < d < 90.0:
                raise ValueError(f"stabilization angle {d} out of range (0, 90) degrees")

    def __len__(self):
        return len(self.degrees)

    @staticmethod
    def parse(text: str) -> "AngleSet":
        """Parse a comma-separated list like '13,15'; blank means empty."""
        parts = [p for p in text.replace(" ", "").split(",") if p]
        return AngleSet(tuple(float(p) for p in parts))


@dataclass
class ViewDataset:
    """Aligned (camera, target image) pairs."""

    cameras: list
    images: list

    def __post_init__(self):
        if len(self.cameras) != len(self.images):
            raise ValueError(f"{len(self.cameras)} cameras vs {len(self.images)} images")

    def __len__(self):
        return len(self.cameras)

    def __getitem__(self, i):
        return self.cameras[i], self.images[i]


def generate_offsets(angles: AngleSet) -> list[tuple[float, float]]:
    """All (dtheta, dphi) offset pairs in degrees, 8 per angle.

    Deterministic order: angles as given; dtheta major, dphi minor, each
    running -delta, 0, +delta; the identity pair is excluded.
    """
    offsets = []
    for delta in angles.degrees:
        for dtheta in (-delta, 0.0, delta):
            for dphi in (-delta, 0.0, delta):
                if dtheta == 0.0 and dphi == 0.0:
                    continue
                offsets.append((dtheta, dphi))
    return offsets


def ves_viewpoints(cam: Camera, angles: AngleSet) -> list[Camera]:
    """One perturbed camera per offset pair around ``cam``."""
    return [perturb_camera(cam, math.radians(dt), math.radians(dp))
            for dt, dp in generate_offsets(angles)]


def build_stab_dataset(clean_scene: Scene, stab_cameras, background) -> ViewDataset:
    """Render stabilization ground truth from the untouched model.

    The returned images are rendered once and must stay frozen for the
    whole training run; pass the scene as it exists before any attack
    iteration has mutated it.
    """
    from splatlab.render import render

    cameras = [c.copy() for c in stab_cameras]
    images = [render(clean_scene, cam, background) for cam in cameras]
    for img in images:
        img.setflags(write=False)
    return ViewDataset(cameras=cameras, images=images)
