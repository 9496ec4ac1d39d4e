"""
Cross-teaching and self-teaching consistency losses, and the appearance
simulator (gamma, colour jitter, random occluding crops).

Both consistency losses compare two depth maps through the sum-normalized
absolute difference |a - b| / (a + b + eps). One operand of each loss is a
constant for differentiation: the teacher depth in cross-teaching and the
original-branch depth in self-teaching. The gradients returned here honour
that; the tagged operand receives an all-zero gradient.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, field

import numpy as np

from .geometry import _as_hwc

DEFAULT_EPS = 1e-7


@dataclass(frozen=True)
class StopGradientTag:
    operand: str


@dataclass
class ConsistencyLoss:
    value: float
    per_pixel: np.ndarray
    mask: np.ndarray
    stop_gradient: StopGradientTag
    grads: dict = field(repr=False)

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    def gradient(self, operand: str) -> np.ndarray:
        return self.grads[operand]


def _check_depths(a, b):
    A = np.asarray(a, dtype=np.float64)
    B = np.asarray(b, dtype=np.float64)
    if A.shape != B.shape:
        raise ValueError(f"depth maps differ in shape: {A.shape} vs {B.shape}")
    for X in (A, B):
        if not np.all(np.isfinite(X)) or np.any(X <= 0):
            raise ValueError("depths must be finite and positive")
    return A, B


def _normalized_diff(live, frozen, mask, eps):
    """Masked mean of |live - frozen| / (live + frozen + eps) and d/d(live)."""
    diff = live - frozen
    s = live + frozen + eps
    per_pixel = np.abs(diff) / s
    n = int(mask.sum())
    if n == 0:
        return 0.0, np.where(mask, per_pixel, 0.0), np.zeros_like(live)
    value = float(per_pixel[mask].sum() / n)
    g = (np.sign(diff) / s - np.abs(diff) / (s * s)) / n
    return value, np.where(mask, per_pixel, 0.0), np.where(mask, g, 0.0)


def cross_teaching_loss(student, teacher, eps: float = DEFAULT_EPS) -> ConsistencyLoss:
    """Student depth distilled toward an external teacher depth."""
    D, T = _check_depths(student, teacher)
    mask = np.ones(D.shape, dtype=bool)
    value, per_pixel, g = _normalized_diff(D, T, mask, eps)
    return ConsistencyLoss(value, per_pixel, mask, StopGradientTag("teacher"),
                           {"student": g, "teacher": np.zeros_like(T)})


def self_teaching_loss(original, transformed, R, eps: float = DEFAULT_EPS) -> ConsistencyLoss:
    """
    Consistency of the perturbed-input depth with the original-input depth,
    averaged over pixels where the occlusion mask ``R`` is True.
    """
    D, Dt = _check_depths(original, transformed)
    R = np.asarray(R, dtype=bool)
    if R.shape != D.shape:
        raise ValueError("occlusion mask shape does not match depth")
    value, per_pixel, g = _normalized_diff(Dt, D, R, eps)
    return ConsistencyLoss(value, per_pixel, R, StopGradientTag("original"),
                           {"transformed": g, "original": np.zeros_like(D)})


# -- appearance simulator -----------------------------------------------------

def gamma_correct(img, gamma: float) -> np.ndarray:
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    I = np.asarray(img, dtype=np.float64)
    return np.clip(I, 0.0, 1.0) ** gamma


_rgb_to_hls = np.vectorize(colorsys.rgb_to_hls, otypes=[float, float, float])
_hls_to_rgb = np.vectorize(colorsys.hls_to_rgb, otypes=[float, float, float])


def color_jitter(img, brightness: float = 0.0, contrast: float = 1.0,
                 saturation: float = 1.0, hue: float = 0.0) -> np.ndarray:
    """
    Brightness (additive), contrast (scaling about each channel's mean), then
    saturation and hue in HLS space (hue in turns). Neutral parameters are
    skipped so the neutral jitter is an exact identity. Saturation and hue
    only apply to 3-channel images.
    """
    orig = np.asarray(img, dtype=np.float64)
    I = _as_hwc(orig).copy()
    if brightness != 0.0:
        I = np.clip(I + brightness, 0.0, 1.0)
    if contrast != 1.0:
        if contrast < 0:
            raise ValueError("contrast factor must be non-negative")
        mean = I.mean(axis=(0, 1), keepdims=True)
        I = np.clip(mean + contrast * (I - mean), 0.0, 1.0)
    if I.shape[2] == 3 and (saturation != 1.0 or hue != 0.0):
        if saturation < 0:
            raise ValueError("saturation factor must be non-negative")
        h, l, s = _rgb_to_hls(I[..., 0], I[..., 1], I[..., 2])
        h = np.mod(h + hue, 1.0)
        s = np.clip(s * saturation, 0.0, 1.0)
        r, g, b = _hls_to_rgb(h, l, s)
        I = np.clip(np.stack([r, g, b], axis=-1), 0.0, 1.0)
    return I.reshape(orig.shape)


@dataclass(frozen=True)
class AppearanceSimConfig:
    gamma_range: tuple = (0.5, 2.0)
    brightness: float = 0.2
    contrast_range: tuple = (0.8, 1.25)
    saturation_range: tuple = (0.8, 1.2)
    hue: float = 0.05
    mask_count_range: tuple = (1, 3)
    mask_size_range: tuple = (8, 32)
    fill: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        lo, hi = self.gamma_range
        if not 0 < lo <= hi:
            raise ValueError(f"invalid gamma range {self.gamma_range}")
        for name in ("contrast_range", "saturation_range", "mask_count_range", "mask_size_range"):
            a, b = getattr(self, name)
            if a > b:
                raise ValueError(f"{name}: lower bound exceeds upper bound")
        if self.contrast_range[0] < 0 or self.saturation_range[0] < 0:
            raise ValueError("contrast and saturation factors must be non-negative")
        if self.brightness < 0 or self.hue < 0:
            raise ValueError("brightness and hue are symmetric half-widths and must be >= 0")
        if self.mask_count_range[0] < 0:
            raise ValueError("mask count must be non-negative")
        if self.mask_size_range[0] < 1:
            raise ValueError("mask sizes must be positive")
        if not 0 <= self.fill <= 1:
            raise ValueError("fill must lie in [0, 1]")

    @classmethod
    def identity(cls, rng_seed: int = 0) -> "AppearanceSimConfig":
        return cls(gamma_range=(1.0, 1.0), brightness=0.0, contrast_range=(1.0, 1.0),
                   saturation_range=(1.0, 1.0), hue=0.0, mask_count_range=(0, 0),
                   rng_seed=rng_seed)


@dataclass
class SimulatorResult:
    image: np.ndarray
    occlusion: np.ndarray   # True = unoccluded
    params: dict


def draw_simulator_params(cfg: AppearanceSimConfig, height: int, width: int) -> dict:
    """
    Sample simulator parameters from ``np.random.default_rng(cfg.rng_seed)``.

    Draw order: gamma, brightness, contrast, saturation, hue (uniform), mask
    count (integer), then per mask: height, width, top row, left column
    (integers). Mask sides are capped at the image size.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    p = {
        "seed": cfg.rng_seed,
        "gamma": float(rng.uniform(*cfg.gamma_range)),
        "brightness": float(rng.uniform(-cfg.brightness, cfg.brightness)),
        "contrast": float(rng.uniform(*cfg.contrast_range)),
        "saturation": float(rng.uniform(*cfg.saturation_range)),
        "hue": float(rng.uniform(-cfg.hue, cfg.hue)),
    }
    n = int(rng.integers(cfg.mask_count_range[0], cfg.mask_count_range[1] + 1))
    lo, hi = cfg.mask_size_range
    crops = []
    for _ in range(n):
        h = min(int(rng.integers(lo, hi + 1)), height)
        w = min(int(rng.integers(lo, hi + 1)), width)
        y0 = int(rng.integers(0, height - h + 1))
        x0 = int(rng.integers(0, width - w + 1))
        crops.append((x0, y0, w, h))
    p["crops"] = crops
    return p


def apply_appearance_simulator(img, cfg: AppearanceSimConfig) -> SimulatorResult:
    """Gamma -> colour jitter -> masking; R is False inside the crops."""
    I = np.asarray(img, dtype=np.float64)
    H, W = I.shape[:2]
    p = draw_simulator_params(cfg, H, W)
    out = gamma_correct(I, p["gamma"]) if p["gamma"] != 1.0 else I.copy()
    out = color_jitter(out, p["brightness"], p["contrast"], p["saturation"], p["hue"])
    R = np.ones((H, W), dtype=bool)
    for x0, y0, w, h in p["crops"]:
        R[y0:y0 + h, x0:x0 + w] = False
    out[~R] = cfg.fill
    return SimulatorResult(out, R, p)
