"""Differentiable splatting renderer.

Images are (H, W, 3) float64 arrays with values in [0, 1]; row index is
the image y coordinate, column index is x, and the pixel at (row, col)
samples the continuous image plane at (x=col, y=row).

The forward pass sorts visible splats by ascending depth (ties broken by
scene index) and composites front to back:

    alpha'_i = min(0.99, alpha_i * exp(-0.5 d^T cov2d^-1 d))
    C        = sum_i T_i alpha'_i c_i + T_final * background
    T_i      = prod_{j<i} (1 - alpha'_j)

contributions with alpha' < 1/255 are skipped, as are pixels whose
transmittance has fallen below T_MIN. The backward pass replays the same
traversal and produces exact gradients of this computation for every raw
Gaussian parameter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from splatlab import geometry
from splatlab.model import Gaussian, Scene
from splatlab.render import backend
from splatlab.render.constants import (ALPHA_CLAMP, COV_REG, CULL_SIGMA,
                                       MIN_ALPHA, T_MIN)
from splatlab.render.projection import ProjectedSplats, backward_chain, project_scene

__all__ = [
    "ALPHA_CLAMP", "COV_REG", "CULL_SIGMA", "MIN_ALPHA", "T_MIN",
    "Splat2D", "RenderGrads", "project_gaussian", "render",
    "render_backward", "backend", "project_scene",
]


@dataclass
class Splat2D:
    """One projected Gaussian in screen space."""

    mean2d: np.ndarray    # (2,) pixels
    inv_cov: np.ndarray   # (2, 2) pixels^-2, of the regularized covariance
    depth: float
    opacity: float
    color: np.ndarray     # (3,) activated
    source_index: int


@dataclass
class RenderGrads:
    """Loss gradients for every raw parameter of every Gaussian.

    ``mean2d_grad_norm`` holds the norm of each Gaussian's accumulated
    screen-space position gradient (density-control signal); ``visible``
    flags the Gaussians that survived culling in this render.
    """

    d_means: np.ndarray
    d_log_scales: np.ndarray
    d_quats: np.ndarray
    d_colors: np.ndarray
    d_opacity_logits: np.ndarray
    mean2d_grad_norm: np.ndarray
    visible: np.ndarray


def project_gaussian(g: Gaussian, cam: geometry.Camera, source_index: int = 0):
    """Project a single Gaussian; returns a Splat2D or None when culled."""
    scene = Scene(g.mean[None], g.log_scale[None], g.quat[None],
                  g.color[None], np.array([g.opacity_logit]), extent=1.0)
    proj = project_scene(scene, cam)
    if len(proj.order) == 0:
        return None
    a, b, c = proj.inv_cov[0]
    return Splat2D(mean2d=proj.mean2d[0].copy(),
                   inv_cov=np.array([[a, b], [b, c]]),
                   depth=float(proj.depth[0]),
                   opacity=float(proj.alpha[0]),
                   color=proj.color[0].copy(),
                   source_index=source_index)


def _as_background(background) -> np.ndarray:
    bg = np.asarray(background, dtype=float).reshape(3)
    if np.any(bg < 0) or np.any(bg > 1):
        raise ValueError("background color must lie in [0, 1]")
    return bg


def render(scene: Scene, cam: geometry.Camera, background) -> np.ndarray:
    """Render the scene to an (H, W, 3) image."""
    bg = _as_background(background)
    proj = project_scene(scene, cam)
    image = np.zeros((cam.height, cam.width, 3))
    transmit = np.ones((cam.height, cam.width))
    backend.kernels().composite_forward(
        proj.mean2d, proj.inv_cov, proj.alpha, proj.color, proj.radius,
        image, transmit)
    image += transmit[:, :, None] * bg
    return image


def render_backward(scene: Scene, cam: geometry.Camera, background,
                    d_image: np.ndarray) -> RenderGrads:
    """Gradients of sum(d_image * rendered_image) w.r.t. all raw parameters.

    Recomputes the forward pass internally, so it must see the same scene
    and camera that produced the loss being differentiated.
    """
    bg = _as_background(background)
    d_image = np.ascontiguousarray(d_image, dtype=float)
    if d_image.shape != (cam.height, cam.width, 3):
        raise ValueError(f"gradient image shape {d_image.shape} does not match "
                         f"camera ({cam.height}, {cam.width}, 3)")
    proj = project_scene(scene, cam)
    kern = backend.kernels()

    image = np.zeros((cam.height, cam.width, 3))
    transmit = np.ones((cam.height, cam.width))
    kern.composite_forward(proj.mean2d, proj.inv_cov, proj.alpha, proj.color,
                           proj.radius, image, transmit)
    image += transmit[:, :, None] * bg

    k = len(proj.order)
    d_mean2d = np.zeros((k, 2))
    d_inv_cov = np.zeros((k, 3))
    d_color = np.zeros((k, 3))
    d_alpha = np.zeros(k)
    remaining = image.copy()
    transmit = np.ones((cam.height, cam.width))
    kern.composite_backward(proj.mean2d, proj.inv_cov, proj.alpha, proj.color,
                            proj.radius, d_image, remaining, transmit,
                            d_mean2d, d_inv_cov, d_color, d_alpha)

    (d_means, d_log_scales, d_quats, d_colors, d_opacity_logits,
     mean2d_norms) = backward_chain(scene, proj, d_mean2d, d_inv_cov,
                                    d_color, d_alpha)
    return RenderGrads(d_means=d_means, d_log_scales=d_log_scales,
                       d_quats=d_quats, d_colors=d_colors,
                       d_opacity_logits=d_opacity_logits,
                       mean2d_grad_norm=mean2d_norms, visible=proj.visible)
