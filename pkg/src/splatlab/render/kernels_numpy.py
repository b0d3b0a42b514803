"""Vectorized numpy compositing kernels (fallback backend).

Splats arrive pre-culled and pre-sorted front to back. Each splat is
processed over its bounding box with array operations; per-pixel results
match the scalar numba kernels because every pixel sees the same update
sequence in the same order.
"""

from __future__ import annotations

import math

import numpy as np

from splatlab.render.constants import ALPHA_CLAMP, MIN_ALPHA, T_MIN


def _box(ux, uy, r, H, W):
    x0 = max(0, int(math.ceil(ux - r)))
    x1 = min(W - 1, int(math.floor(ux + r)))
    y0 = max(0, int(math.ceil(uy - r)))
    y1 = min(H - 1, int(math.floor(uy + r)))
    return x0, x1, y0, y1


def composite_forward(mean2d, inv_cov, opacity, color, radius, image, transmit):
    """Front-to-back alpha blending into ``image`` (no background term).

    ``image`` must arrive zeroed and ``transmit`` all ones; both are
    updated in place. The caller adds transmit * background afterwards.
    """
    H, W = transmit.shape
    for s in range(mean2d.shape[0]):
        x0, x1, y0, y1 = _box(mean2d[s, 0], mean2d[s, 1], radius[s], H, W)
        if x0 > x1 or y0 > y1:
            continue
        dx = np.arange(x0, x1 + 1, dtype=float)[None, :] - mean2d[s, 0]
        dy = np.arange(y0, y1 + 1, dtype=float)[:, None] - mean2d[s, 1]
        a, b, c = inv_cov[s]
        q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
        alpha = opacity[s] * np.exp(-0.5 * q)
        np.minimum(alpha, ALPHA_CLAMP, out=alpha)
        tbox = transmit[y0:y1 + 1, x0:x1 + 1]
        live = (alpha >= MIN_ALPHA) & (tbox >= T_MIN)
        if not live.any():
            continue
        w = np.where(live, tbox * alpha, 0.0)
        image[y0:y1 + 1, x0:x1 + 1] += w[:, :, None] * color[s]
        transmit[y0:y1 + 1, x0:x1 + 1] = np.where(live, tbox * (1.0 - alpha), tbox)


def composite_backward(mean2d, inv_cov, opacity, color, radius, d_image,
                       remaining, transmit,
                       d_mean2d, d_inv_cov, d_color, d_opacity):
    """Replay the forward pass, accumulating per-splat gradients.

    ``remaining`` must arrive as a copy of the final rendered image
    (background included) and ``transmit`` all ones; as splats are
    replayed front to back, ``remaining`` holds the color contributed by
    everything behind the current splat, which closes the derivative of
    the transmittance product without any per-pixel history.

    Gradient outputs: d_mean2d (pixels), d_inv_cov as the symmetric
    (g00, g01, g11) gradient of the 2x2 inverse covariance, d_color in
    activated color space, d_opacity in activated opacity space.
    """
    H, W = transmit.shape
    for s in range(mean2d.shape[0]):
        x0, x1, y0, y1 = _box(mean2d[s, 0], mean2d[s, 1], radius[s], H, W)
        if x0 > x1 or y0 > y1:
            continue
        dx = np.arange(x0, x1 + 1, dtype=float)[None, :] - mean2d[s, 0]
        dy = np.arange(y0, y1 + 1, dtype=float)[:, None] - mean2d[s, 1]
        a, b, c = inv_cov[s]
        q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
        g = np.exp(-0.5 * q)
        alpha_raw = opacity[s] * g
        aeff = np.minimum(alpha_raw, ALPHA_CLAMP)
        tbox = transmit[y0:y1 + 1, x0:x1 + 1]
        live = (aeff >= MIN_ALPHA) & (tbox >= T_MIN)
        if not live.any():
            continue

        w = np.where(live, tbox * aeff, 0.0)
        gpix = d_image[y0:y1 + 1, x0:x1 + 1]
        d_color[s] += np.einsum("yx,yxk->k", w, gpix)

        rem = remaining[y0:y1 + 1, x0:x1 + 1]
        contrib = w[:, :, None] * color[s]
        behind = rem - contrib
        dC_da = tbox[:, :, None] * color[s] - behind / (1.0 - aeff)[:, :, None]
        da = np.where(live, np.einsum("yxk,yxk->yx", gpix, dC_da), 0.0)

        live3 = live[:, :, None]
        remaining[y0:y1 + 1, x0:x1 + 1] = np.where(live3, behind, rem)
        transmit[y0:y1 + 1, x0:x1 + 1] = np.where(live, tbox * (1.0 - aeff), tbox)

        # The 0.99 clamp blocks gradient flow into alpha when saturated.
        da = np.where(alpha_raw > ALPHA_CLAMP, 0.0, da)
        d_opacity[s] += np.sum(da * g)
        dq = -0.5 * da * alpha_raw
        d_mean2d[s, 0] += np.sum(-dq * 2.0 * (a * dx + b * dy))
        d_mean2d[s, 1] += np.sum(-dq * 2.0 * (b * dx + c * dy))
        d_inv_cov[s, 0] += np.sum(dq * dx * dx)
        d_inv_cov[s, 1] += np.sum(dq * dx * dy)
        d_inv_cov[s, 2] += np.sum(dq * dy * dy)
