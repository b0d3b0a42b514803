"""Image losses and quality metrics.

All functions operate on (H, W, 3) float images with unit dynamic range.
SSIM uses an 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2,
evaluated on valid window positions only (no padding) and averaged over
channels. The training objective blends L1 with structural dissimilarity:

    loss = (1 - lam) * l1(render, target) + lam * (1 - ssim(render, target))

and its analytic gradient image feeds the renderer's backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
PSNR_SENTINEL = 99.0


def _check_pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if a.ndim != 3:
        raise ValueError(f"expected (H, W, C) images, got shape {a.shape}")
    return a, b


def l1(a, b) -> float:
    """Mean absolute difference over all pixels and channels."""
    a, b = _check_pair(a, b)
    return float(np.mean(np.abs(a - b)))


def _window() -> np.ndarray:
    r = np.arange(SSIM_WINDOW) - (SSIM_WINDOW - 1) / 2.0
    g = np.exp(-0.5 * (r / SSIM_SIGMA) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


_W = _window()


def _valid_corr(img: np.ndarray) -> np.ndarray:
    view = sliding_window_view(img, (SSIM_WINDOW, SSIM_WINDOW))
    return np.einsum("hwij,ij->hw", view, _W)


def _adjoint_corr(gmap: np.ndarray) -> np.ndarray:
    # transpose of _valid_corr; the window is symmetric, so this is a
    # zero-padded correlation with the same window
    pad = SSIM_WINDOW - 1
    return _valid_corr(np.pad(gmap, pad))


def _ssim_channel(a, b, with_grad: bool):
    mu_a = _valid_corr(a)
    mu_b = _valid_corr(b)
    wa2 = _valid_corr(a * a)
    wb2 = _valid_corr(b * b)
    wab = _valid_corr(a * b)
    var_a = wa2 - mu_a * mu_a
    var_b = wb2 - mu_b * mu_b
    cov = wab - mu_a * mu_b
    A1 = 2.0 * mu_a * mu_b + SSIM_C1
    A2 = 2.0 * cov + SSIM_C2
    B1 = mu_a * mu_a + mu_b * mu_b + SSIM_C1
    B2 = var_a + var_b + SSIM_C2
    S = (A1 * A2) / (B1 * B2)
    if not with_grad:
        return S, None
    # gradient of sum(S) w.r.t. a, through mu_a, wa2, wab
    inv_BB = 1.0 / (B1 * B2)
    d_A1 = A2 * inv_BB
    d_A2 = A1 * inv_BB
    d_B1 = -S / B1
    d_B2 = -S / B2
    g_mu_a = 2.0 * (d_A1 * mu_b - d_A2 * mu_b + d_B1 * mu_a - d_B2 * mu_a)
    g_wab = 2.0 * d_A2
    g_wa2 = d_B2
    grad = _adjoint_corr(g_mu_a) + b * _adjoint_corr(g_wab) + 2.0 * a * _adjoint_corr(g_wa2)
    return S, grad


def ssim(a, b) -> float:
    """Structural similarity averaged over channels and valid windows."""
    value, _ = ssim_with_grad(a, b, with_grad=False)
    return value


def ssim_with_grad(a, b, with_grad: bool = True):
    """SSIM value and (optionally) its gradient with respect to ``a``."""
    a, b = _check_pair(a, b)
    h, w = a.shape[:2]
    if min(h, w) < SSIM_WINDOW:
        raise ValueError(f"image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} "
                         "SSIM window")
    n_ch = a.shape[2]
    total = 0.0
    grad = np.zeros_like(a) if with_grad else None
    n_win = (h - SSIM_WINDOW + 1) * (w - SSIM_WINDOW + 1)
    for ch in range(n_ch):
        S, g = _ssim_channel(a[:, :, ch], b[:, :, ch], with_grad)
        total += float(S.mean())
        if with_grad:
            grad[:, :, ch] = g / n_win
    value = total / n_ch
    if with_grad:
        grad /= n_ch
    return value, grad


def training_loss(rendered, target, lam: float):
    """Blended L1 / structural-dissimilarity loss and its gradient image."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lam must lie in [0, 1], got {lam}")
    a, b = _check_pair(rendered, target)
    diff = a - b
    value = (1.0 - lam) * float(np.mean(np.abs(diff)))
    grad = (1.0 - lam) * np.sign(diff) / diff.size
    if lam > 0.0:
        s_value, s_grad = ssim_with_grad(a, b)
        value += lam * (1.0 - s_value)
        grad -= lam * s_grad
    return value, grad


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for unit dynamic range."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_SENTINEL
    return float(10.0 * np.log10(1.0 / mse))


@dataclass
class MetricsReport:
    """Per-view quality scores for one evaluation group."""

    group: str
    view_ids: list = field(default_factory=list)
    psnr_db: list = field(default_factory=list)
    ssim: list = field(default_factory=list)

    def __len__(self):
        return len(self.view_ids)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_db)) if self.psnr_db else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else float("nan")

    def rows(self):
        return [(self.group, vid, p, s)
                for vid, p, s in zip(self.view_ids, self.psnr_db, self.ssim)]


def evaluate_group(scene, cameras, targets, group_name: str,
                   background) -> MetricsReport:
    """Render each camera and score against its aligned target image."""
    from splatlab.render import render

    cameras = list(cameras)
    targets = list(targets)
    if len(cameras) != len(targets):
        raise ValueError(f"{len(cameras)} cameras vs {len(targets)} targets")
    report = MetricsReport(group=group_name)
    for i, (cam, target) in enumerate(zip(cameras, targets)):
        img = render(scene, cam, background)
        report.view_ids.append(i)
        report.psnr_db.append(psnr(img, target))
        report.ssim.append(ssim(img, target))
    return report
