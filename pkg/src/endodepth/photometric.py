"""
Photometric error terms: SSIM, the weighted SSIM/L1 error, per-pixel minimum
over source frames and the edge-aware smoothness prior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .geometry import _as_hwc


@dataclass(frozen=True)
class PhotometricConfig:
    alpha: float = 0.85
    ssim_window: int = 3
    c1: float = 0.01 ** 2
    c2: float = 0.03 ** 2

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.ssim_window < 3 or self.ssim_window % 2 == 0:
            raise ValueError(f"ssim_window must be odd and >= 3, got {self.ssim_window}")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("SSIM constants must be positive")


@dataclass
class LossMap:
    """Per-pixel values with the mask of pixels that count in reductions."""

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.mask is None:
            self.mask = np.ones(self.values.shape, dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.values.shape:
            raise ValueError("mask and values disagree in shape")

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    def mean(self) -> float:
        n = self.count
        return float(self.values[self.mask].sum() / n) if n else 0.0


def _check_pair(a, b):
    A, B = _as_hwc(a), _as_hwc(b)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    return A, B


def box_mean(x, window: int) -> np.ndarray:
    """Local mean over a window x window box, mirror padding, per channel."""
    return uniform_filter(x, size=(window, window, 1), mode="mirror")


def ssim_map(a, b, cfg: PhotometricConfig = PhotometricConfig()) -> LossMap:
    """Per-pixel SSIM from box-filtered local moments, averaged over channels."""
    A, B = _check_pair(a, b)
    w = cfg.ssim_window
    mu_a = box_mean(A, w)
    mu_b = box_mean(B, w)
    var_a = box_mean(A * A, w) - mu_a * mu_a
    var_b = box_mean(B * B, w) - mu_b * mu_b
    cov = box_mean(A * B, w) - mu_a * mu_b
    num = (2 * mu_a * mu_b + cfg.c1) * (2 * cov + cfg.c2)
    den = (mu_a * mu_a + mu_b * mu_b + cfg.c1) * (var_a + var_b + cfg.c2)
    return LossMap((num / den).mean(axis=2), None)


def photometric_error(target, warped, mask=None,
                      cfg: PhotometricConfig = PhotometricConfig()) -> LossMap:
    """alpha * (1 - SSIM) / 2 + (1 - alpha) * mean-over-channels |target - warped|."""
    T, Wp = _check_pair(target, warped)
    l1 = np.abs(T - Wp).mean(axis=2)
    if cfg.alpha > 0:
        ssim = ssim_map(T, Wp, cfg).values
        err = cfg.alpha * (1 - ssim) / 2 + (1 - cfg.alpha) * l1
    else:
        err = l1
    if mask is None:
        mask = np.ones(l1.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != l1.shape:
        raise ValueError("mask shape does not match images")
    return LossMap(err, mask)


def min_over_sources(losses) -> LossMap:
    """Elementwise minimum; pixels invalid in a map count as +inf there."""
    losses = list(losses)
    if not losses:
        raise ValueError("need at least one loss map")
    shape = losses[0].values.shape
    if any(m.values.shape != shape for m in losses):
        raise ValueError("loss maps differ in shape")
    stack = np.stack([np.where(m.mask, m.values, np.inf) for m in losses])
    best = stack.min(axis=0)
    mask = np.isfinite(best)
    return LossMap(np.where(mask, best, 0.0), mask)


def edge_aware_smoothness(depth, img) -> float:
    """
    Mean |d(depth/mean depth)| * exp(-|d img|) with forward differences.

    Image gradients are averaged over channels. The x and y terms are each
    averaged over their own valid difference sites and then added.
    """
    D = np.asarray(depth, dtype=np.float64)
    I = _as_hwc(img)
    if D.shape != I.shape[:2]:
        raise ValueError("depth and image disagree in shape")
    wx, wy = smoothness_weights(I)
    Dn = D / D.mean()
    gx = np.abs(np.diff(Dn, axis=1))
    gy = np.abs(np.diff(Dn, axis=0))
    total = 0.0
    if gx.size:
        total += float((gx * wx).mean())
    if gy.size:
        total += float((gy * wy).mean())
    return total


def smoothness_weights(img):
    """Edge weights exp(-|dI|) for horizontal and vertical neighbour pairs."""
    I = _as_hwc(img)
    wx = np.exp(-np.abs(np.diff(I, axis=1)).mean(axis=2))
    wy = np.exp(-np.abs(np.diff(I, axis=0)).mean(axis=2))
    return wx, wy


def edge_aware_smoothness_grad(depth, img, fd_step: float = 1e-3):
    """
    Smoothness loss, its gradient w.r.t. depth, and depth pixels within
    ``fd_step`` of a kink of |d(depth/mean)|.

    The loss has degree-0 homogeneity in depth, so the mean normalization
    contributes the projection term below.
    """
    D = np.asarray(depth, dtype=np.float64)
    wx, wy = smoothness_weights(img)
    m = D.mean()
    Dn = D / m
    ex = np.diff(Dn, axis=1)
    ey = np.diff(Dn, axis=0)
    g = np.zeros_like(D)
    value = 0.0
    flag = np.zeros(D.shape, dtype=bool)
    h = 2 * fd_step / m
    if ex.size:
        value += float((np.abs(ex) * wx).mean())
        cx = np.sign(ex) * wx / ex.size
        g[:, 1:] += cx
        g[:, :-1] -= cx
        kink = np.abs(ex) <= h
        flag[:, 1:] |= kink
        flag[:, :-1] |= kink
    if ey.size:
        value += float((np.abs(ey) * wy).mean())
        cy = np.sign(ey) * wy / ey.size
        g[1:, :] += cy
        g[:-1, :] -= cy
        kink = np.abs(ey) <= h
        flag[1:, :] |= kink
        flag[:-1, :] |= kink
    grad = (g - (g * Dn).sum() / D.size) / m
    return value, grad, flag
