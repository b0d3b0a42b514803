"""Numba-jitted compositing kernels (default backend).

Same contract and arithmetic as kernels_numpy; see that module for the
derivation of the backward recurrence. First call per process pays JIT
compilation (cached on disk afterwards).
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from splatlab.render.constants import ALPHA_CLAMP, MIN_ALPHA, T_MIN


@njit(cache=True)
def _composite_forward(mean2d, inv_cov, opacity, color, radius, image, transmit,
                       alpha_clamp, min_alpha, t_min):
    H, W = transmit.shape
    for s in range(mean2d.shape[0]):
        ux = mean2d[s, 0]
        uy = mean2d[s, 1]
        r = radius[s]
        x0 = max(0, int(math.ceil(ux - r)))
        x1 = min(W - 1, int(math.floor(ux + r)))
        y0 = max(0, int(math.ceil(uy - r)))
        y1 = min(H - 1, int(math.floor(uy + r)))
        a = inv_cov[s, 0]
        b = inv_cov[s, 1]
        c = inv_cov[s, 2]
        op = opacity[s]
        for yy in range(y0, y1 + 1):
            dy = yy - uy
            for xx in range(x0, x1 + 1):
                t = transmit[yy, xx]
                if t < t_min:
                    continue
                dx = xx - ux
                q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
                alpha = op * math.exp(-0.5 * q)
                if alpha > alpha_clamp:
                    alpha = alpha_clamp
                if alpha < min_alpha:
                    continue
                w = t * alpha
                image[yy, xx, 0] += w * color[s, 0]
                image[yy, xx, 1] += w * color[s, 1]
                image[yy, xx, 2] += w * color[s, 2]
                transmit[yy, xx] = t * (1.0 - alpha)


@njit(cache=True)
def _composite_backward(mean2d, inv_cov, opacity, color, radius, d_image,
                        remaining, transmit,
                        d_mean2d, d_inv_cov, d_color, d_opacity,
                        alpha_clamp, min_alpha, t_min):
    H, W = transmit.shape
    for s in range(mean2d.shape[0]):
        ux = mean2d[s, 0]
        uy = mean2d[s, 1]
        r = radius[s]
        x0 = max(0, int(math.ceil(ux - r)))
        x1 = min(W - 1, int(math.floor(ux + r)))
        y0 = max(0, int(math.ceil(uy - r)))
        y1 = min(H - 1, int(math.floor(uy + r)))
        a = inv_cov[s, 0]
        b = inv_cov[s, 1]
        c = inv_cov[s, 2]
        op = opacity[s]
        for yy in range(y0, y1 + 1):
            dy = yy - uy
            for xx in range(x0, x1 + 1):
                t = transmit[yy, xx]
                if t < t_min:
                    continue
                dx = xx - ux
                q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
                g = math.exp(-0.5 * q)
                alpha_raw = op * g
                clamped = alpha_raw > alpha_clamp
                aeff = alpha_clamp if clamped else alpha_raw
                if aeff < min_alpha:
                    continue
                w = t * aeff
                da = 0.0
                for ch in range(3):
                    gch = d_image[yy, xx, ch]
                    d_color[s, ch] += w * gch
                    contrib = w * color[s, ch]
                    behind = remaining[yy, xx, ch] - contrib
                    da += gch * (t * color[s, ch] - behind / (1.0 - aeff))
                    remaining[yy, xx, ch] = behind
                transmit[yy, xx] = t * (1.0 - aeff)
                if clamped:
                    continue
                d_opacity[s] += da * g
                dq = -0.5 * da * alpha_raw
                d_mean2d[s, 0] += -dq * 2.0 * (a * dx + b * dy)
                d_mean2d[s, 1] += -dq * 2.0 * (b * dx + c * dy)
                d_inv_cov[s, 0] += dq * dx * dx
                d_inv_cov[s, 1] += dq * dx * dy
                d_inv_cov[s, 2] += dq * dy * dy


def composite_forward(mean2d, inv_cov, opacity, color, radius, image, transmit):
    _composite_forward(mean2d, inv_cov, opacity, color, radius, image, transmit,
                       ALPHA_CLAMP, MIN_ALPHA, T_MIN)


def composite_backward(mean2d, inv_cov, opacity, color, radius, d_image,
                       remaining, transmit,
                       d_mean2d, d_inv_cov, d_color, d_opacity):
    _composite_backward(mean2d, inv_cov, opacity, color, radius, d_image,
                        remaining, transmit,
                        d_mean2d, d_inv_cov, d_color, d_opacity,
                        ALPHA_CLAMP, MIN_ALPHA, T_MIN)
