"""Rotation constructions, pinhole cameras, and point projection.

Conventions (fixed once, used everywhere):
  * world-to-camera extrinsics: ``t_cam = R_w2c @ p_world + T_w2c``
  * camera frame: +z forward, +x right, +y down
  * pixel coordinates: column index = x, row index = y; the pixel at
    (row i, col j) samples the continuous image plane at (x=j, y=i)

Angles cross the public CLI/config boundary in degrees and are converted
to radians exactly once, at that boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

ROTATION_TOL = 1e-9


def rot_x(dtheta: float) -> np.ndarray:
    """Rotation matrix about the x-axis by ``dtheta`` radians."""
    if not math.isfinite(dtheta):
        raise ValueError(f"rotation angle must be finite, got {dtheta!r}")
    c, s = math.cos(dtheta), math.sin(dtheta)
    return np.array([[1.0, 0.0, 0.0],
                     [0.0, c, -s],
                     [0.0, s, c]])


def rot_y(dphi: float) -> np.ndarray:
    """Rotation matrix about the y-axis by ``dphi`` radians."""
    if not math.isfinite(dphi):
        raise ValueError(f"rotation angle must be finite, got {dphi!r}")
    c, s = math.cos(dphi), math.sin(dphi)
    return np.array([[c, 0.0, s],
                     [0.0, 1.0, 0.0],
                     [-s, 0.0, c]])


def is_rotation(R: np.ndarray, tol: float = ROTATION_TOL) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        return False
    if not np.all(np.isfinite(R)):
        return False
    ortho = np.abs(R @ R.T - np.eye(3)).max() <= tol
    return bool(ortho and abs(np.linalg.det(R) - 1.0) <= tol)


@dataclass
class Camera:
    """Pinhole camera: intrinsics in pixels plus world-to-camera extrinsics."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray  # (3, 3) world-to-camera rotation
    T: np.ndarray  # (3,) world-to-camera translation
    near: float = 0.01

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=float)
        self.T = np.asarray(self.T, dtype=float).reshape(3)
        self.validate()

    def validate(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1 pixel")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.near <= 0:
            raise ValueError("near plane must be positive")
        if not is_rotation(self.R):
            raise ValueError("R is not a rotation matrix (R R^T = I, det = 1)")

    def copy(self) -> "Camera":
        return replace(self, R=self.R.copy(), T=self.T.copy())

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.R.T @ self.T


def perturb_camera(cam: Camera, dtheta: float, dphi: float) -> Camera:
    """Pitch/yaw the camera: R' = rot_x(dtheta) @ rot_y(dphi) @ R.

    The offsets compose in the camera frame (left multiplication), so the
    camera rotates about its own center; translation and intrinsics are
    copied unchanged.
    """
    R_new = rot_x(dtheta) @ rot_y(dphi) @ cam.R
    return replace(cam, R=R_new, T=cam.T.copy())


def project_point(cam: Camera, p_world) -> tuple[np.ndarray, float] | None:
    """Project a world point to pixel coordinates.

    Returns (uv, depth), or None when the point lies at or behind the
    near plane (culled, not an error).
    """
    p = np.asarray(p_world, dtype=float).reshape(3)
    t = cam.R @ p + cam.T
    if t[2] <= cam.near:
        return None
    uv = np.array([cam.fx * t[0] / t[2] + cam.cx,
                   cam.fy * t[1] / t[2] + cam.cy])
    return uv, float(t[2])


def projection_jacobian(cam: Camera, t_cam) -> np.ndarray:
    """2x3 Jacobian of the pinhole projection at camera-space point t_cam.

    For (x, y, z):  d(u,v)/d(x,y,z) = [[fx/z, 0, -fx*x/z^2],
                                       [0, fy/z, -fy*y/z^2]]
    """
    x, y, z = np.asarray(t_cam, dtype=float).reshape(3)
    if z <= cam.near:
        raise ValueError(f"point depth {z} not beyond near plane {cam.near}")
    inv_z = 1.0 / z
    inv_z2 = inv_z * inv_z
    return np.array([[cam.fx * inv_z, 0.0, -cam.fx * x * inv_z2],
                     [0.0, cam.fy * inv_z, -cam.fy * y * inv_z2]])


def look_at_camera(eye, target, width, height, fx, fy,
                   cx=None, cy=None, near=0.01) -> Camera:
    """Camera at ``eye`` whose +z axis points at ``target``.

    The image y-axis (camera +y, which points down) is aligned as closely
    as possible with world -z, so world +z appears up in the image.
    Degenerate when the view direction is parallel to world z.
    """
    eye = np.asarray(eye, dtype=float).reshape(3)
    target = np.asarray(target, dtype=float).reshape(3)
    z_c = target - eye
    nz = np.linalg.norm(z_c)
    if nz == 0:
        raise ValueError("eye and target coincide")
    z_c = z_c / nz
    world_down = np.array([0.0, 0.0, -1.0])
    y_c = world_down - np.dot(world_down, z_c) * z_c
    ny = np.linalg.norm(y_c)
    if ny < 1e-9:
        raise ValueError("view direction parallel to world z; up vector undefined")
    y_c = y_c / ny
    x_c = np.cross(y_c, z_c)
    R = np.stack([x_c, y_c, z_c])
    T = -R @ eye
    if cx is None:
        cx = width / 2.0
    if cy is None:
        cy = height / 2.0
    return Camera(width=width, height=height, fx=fx, fy=fy,
                  cx=cx, cy=cy, R=R, T=T, near=near)
