"""Splat projection: 3D Gaussians -> screen-space splats, and the analytic
chain rule from screen-space gradients back to raw scene parameters.

Projection of one Gaussian with covariance Sigma seen by a camera with
world-to-camera rotation W:

    t      = W @ mean + T                      (camera space)
    uv     = (fx*t.x/t.z + cx, fy*t.y/t.z + cy)
    J      = d(uv)/d(t)                        (2x3, pinhole Jacobian)
    cov2d  = J W Sigma W^T J^T + COV_REG * I   (2x2, regularized)

A splat is culled when t.z <= near or when the CULL_SIGMA-sigma square
box around uv misses the image rectangle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from splatlab import geometry
from splatlab.model import Scene, quat_to_rotation, sigmoid
from splatlab.render.constants import COV_REG, CULL_SIGMA


@dataclass
class ProjectedSplats:
    """Visible splats in front-to-back order plus backward intermediates.

    All per-splat arrays are indexed in sorted order; ``order`` maps each
    row back to its Gaussian index in the scene.
    """

    n_scene: int
    cam: geometry.Camera
    order: np.ndarray        # (k,) scene indices, ascending depth
    visible: np.ndarray      # (n_scene,) bool
    mean2d: np.ndarray       # (k, 2) pixels
    depth: np.ndarray        # (k,)
    inv_cov: np.ndarray      # (k, 3) compact symmetric (a, b, c)
    radius: np.ndarray       # (k,) box half-extent, pixels
    alpha: np.ndarray        # (k,) activated opacity
    color: np.ndarray        # (k, 3) activated (clamped) color
    # intermediates for the backward chain
    t_cam: np.ndarray        # (k, 3)
    J: np.ndarray            # (k, 2, 3)
    B: np.ndarray            # (k, 2, 3) = J @ W
    sigma3: np.ndarray       # (k, 3, 3)
    N: np.ndarray            # (k, 3, 3) = R_quat @ diag(scale)
    R_quat: np.ndarray       # (k, 3, 3)
    scale: np.ndarray        # (k, 3)
    q_unit: np.ndarray       # (k, 4)
    q_norm: np.ndarray       # (k,)
    color_raw: np.ndarray    # (k, 3) pre-clamp


def project_scene(scene: Scene, cam: geometry.Camera) -> ProjectedSplats:
    n = len(scene)
    s = np.exp(scene.log_scales)
    q_norm = np.linalg.norm(scene.quats, axis=1)
    if n and np.any(q_norm == 0):
        raise ValueError("zero quaternion has no orientation")
    q_unit = scene.quats / q_norm[:, None] if n else scene.quats.reshape(0, 4)
    R_quat = quat_to_rotation(q_unit) if n else np.empty((0, 3, 3))
    N = R_quat * s[:, None, :]
    sigma3 = np.einsum("nij,nkj->nik", N, N)

    t = scene.means @ cam.R.T + cam.T
    in_front = t[:, 2] > cam.near
    z = np.where(in_front, t[:, 2], 1.0)  # safe divisor; culled rows unused
    inv_z = 1.0 / z
    u = cam.fx * t[:, 0] * inv_z + cam.cx
    v = cam.fy * t[:, 1] * inv_z + cam.cy
    mean2d = np.stack([u, v], axis=1)

    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = cam.fx * inv_z
    J[:, 0, 2] = -cam.fx * t[:, 0] * inv_z * inv_z
    J[:, 1, 1] = cam.fy * inv_z
    J[:, 1, 2] = -cam.fy * t[:, 1] * inv_z * inv_z
    B = np.einsum("nij,jk->nik", J, cam.R)
    cov2d = np.einsum("nij,njk,nlk->nil", B, sigma3, B)
    cov2d[:, 0, 0] += COV_REG
    cov2d[:, 1, 1] += COV_REG

    a = cov2d[:, 0, 0]
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1]
    lam_max = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    radius = CULL_SIGMA * np.sqrt(lam_max)
    on_image = ((u + radius >= 0.0) & (u - radius <= cam.width - 1.0)
                & (v + radius >= 0.0) & (v - radius <= cam.height - 1.0))
    visible = in_front & on_image

    det = a * c - b * b
    inv_cov = np.stack([c / det, -b / det, a / det], axis=1)

    alpha = sigmoid(scene.opacity_logits)
    color = np.clip(scene.colors, 0.0, 1.0)

    vis_idx = np.flatnonzero(visible)
    order = vis_idx[np.argsort(t[vis_idx, 2], kind="stable")]
    return ProjectedSplats(
        n_scene=n, cam=cam, order=order, visible=visible,
        mean2d=mean2d[order], depth=t[order, 2], inv_cov=inv_cov[order],
        radius=radius[order], alpha=alpha[order], color=color[order],
        t_cam=t[order], J=J[order], B=B[order], sigma3=sigma3[order],
        N=N[order], R_quat=R_quat[order], scale=s[order],
        q_unit=q_unit[order], q_norm=q_norm[order],
        color_raw=scene.colors[order],
    )


def _rotation_partials(q_unit):
    """d(rotation)/d(unit quaternion): four (k,3,3) stacks for w, x, y, z."""
    w, x, y, z = q_unit.T
    k = len(w)
    zero = np.zeros(k)
    dw = 2.0 * np.stack([
        np.stack([zero, -z, y], axis=1),
        np.stack([z, zero, -x], axis=1),
        np.stack([-y, x, zero], axis=1)], axis=1)
    dx = 2.0 * np.stack([
        np.stack([zero, y, z], axis=1),
        np.stack([y, -2 * x, -w], axis=1),
        np.stack([z, w, -2 * x], axis=1)], axis=1)
    dy = 2.0 * np.stack([
        np.stack([-2 * y, x, w], axis=1),
        np.stack([x, zero, z], axis=1),
        np.stack([-w, z, -2 * y], axis=1)], axis=1)
    dz = 2.0 * np.stack([
        np.stack([-2 * z, -w, x], axis=1),
        np.stack([w, -2 * z, y], axis=1),
        np.stack([x, y, zero], axis=1)], axis=1)
    return dw, dx, dy, dz


def backward_chain(scene: Scene, proj: ProjectedSplats,
                   d_mean2d, d_inv_cov, d_color, d_alpha):
    """Propagate kernel gradients to raw parameter gradients.

    Inputs are per-sorted-splat gradients from the compositing kernel;
    outputs are dense (n_scene, ...) arrays with zeros for culled
    Gaussians. Also returns the per-Gaussian 2D-mean gradient norms used
    by density control.
    """
    cam = proj.cam
    k = len(proj.order)

    d_means = np.zeros((proj.n_scene, 3))
    d_log_scales = np.zeros((proj.n_scene, 3))
    d_quats = np.zeros((proj.n_scene, 4))
    d_colors = np.zeros((proj.n_scene, 3))
    d_opacity_logits = np.zeros(proj.n_scene)
    mean2d_norms = np.zeros(proj.n_scene)
    if k == 0:
        return (d_means, d_log_scales, d_quats, d_colors, d_opacity_logits,
                mean2d_norms)

    # inverse covariance -> regularized 2D covariance: dM = -A G A
    A = np.empty((k, 2, 2))
    A[:, 0, 0] = proj.inv_cov[:, 0]
    A[:, 0, 1] = A[:, 1, 0] = proj.inv_cov[:, 1]
    A[:, 1, 1] = proj.inv_cov[:, 2]
    G = np.empty((k, 2, 2))
    G[:, 0, 0] = d_inv_cov[:, 0]
    G[:, 0, 1] = G[:, 1, 0] = d_inv_cov[:, 1]
    G[:, 1, 1] = d_inv_cov[:, 2]
    dM = -np.einsum("nij,njk,nkl->nil", A, G, A)

    # cov2d = B sigma3 B^T (+ const): dB = 2 dM B sigma3, dSigma3 = B^T dM B
    dB = 2.0 * np.einsum("nij,njk,nkl->nil", dM, proj.B, proj.sigma3)
    dSigma3 = np.einsum("nji,njk,nkl->nil", proj.B, dM, proj.B)
    dJ = np.einsum("nij,kj->nik", dB, cam.R)

    # t gradient: through uv projection and through J's entries
    x, y, z = proj.t_cam.T
    inv_z2 = 1.0 / (z * z)
    inv_z3 = inv_z2 / z
    dt = np.einsum("nij,ni->nj", proj.J, d_mean2d)
    dt[:, 0] += dJ[:, 0, 2] * (-cam.fx * inv_z2)
    dt[:, 1] += dJ[:, 1, 2] * (-cam.fy * inv_z2)
    dt[:, 2] += (dJ[:, 0, 0] * (-cam.fx * inv_z2)
                 + dJ[:, 1, 1] * (-cam.fy * inv_z2)
                 + dJ[:, 0, 2] * (2.0 * cam.fx * x * inv_z3)
                 + dJ[:, 1, 2] * (2.0 * cam.fy * y * inv_z3))
    d_mean_k = dt @ cam.R

    # sigma3 = N N^T with N = R_quat diag(scale)
    dN = 2.0 * np.einsum("nij,njk->nik", dSigma3, proj.N)
    ds = np.einsum("nik,nik->nk", dN, proj.R_quat)
    d_log_scale_k = ds * proj.scale
    dR = dN * proj.scale[:, None, :]

    dw, dx_, dy_, dz_ = _rotation_partials(proj.q_unit)
    d_q_unit = np.stack([np.einsum("nij,nij->n", dR, p)
                         for p in (dw, dx_, dy_, dz_)], axis=1)
    # through quaternion normalization
    proj_coeff = np.einsum("ni,ni->n", d_q_unit, proj.q_unit)
    d_quat_k = (d_q_unit - proj_coeff[:, None] * proj.q_unit) / proj.q_norm[:, None]

    d_alpha_k = d_alpha * proj.alpha * (1.0 - proj.alpha)
    in_gamut = (proj.color_raw >= 0.0) & (proj.color_raw <= 1.0)
    d_color_k = np.where(in_gamut, d_color, 0.0)

    idx = proj.order
    d_means[idx] = d_mean_k
    d_log_scales[idx] = d_log_scale_k
    d_quats[idx] = d_quat_k
    d_colors[idx] = d_color_k
    d_opacity_logits[idx] = d_alpha_k
    mean2d_norms[idx] = np.linalg.norm(d_mean2d, axis=1)
    return (d_means, d_log_scales, d_quats, d_colors, d_opacity_logits,
            mean2d_norms)
