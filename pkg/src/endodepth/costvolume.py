"""
Plane-sweep cost volume over the target frustum, with the depth range tracked
by an exponential moving average of per-batch depth extremes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import (Intrinsics, RigidTransform, _as_hwc, bilinear_sample_many,
                       pixel_grid, pixel_rays)

DEFAULT_PLANES = 32
FEATURE_KINDS = ("intensity", "grad", "patch3", "patch3n")


@dataclass
class FeatureMap:
    """Row-major (H, W, L) descriptors."""

    data: np.ndarray
    kind: str = "intensity"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] < 1:
            raise ValueError(f"feature data must be (H, W, L) with L >= 1, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("features must be finite")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def length(self) -> int:
        return self.data.shape[2]


def _patch3(img: np.ndarray) -> np.ndarray:
    padded = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="edge")
    H, W, _ = img.shape
    parts = [padded[1 + dy:1 + dy + H, 1 + dx:1 + dx + W]
             for dy in (-1, 0, 1) for dx in (-1, 0, 1)]
    return np.concatenate(parts, axis=2)


def extract_features(img, kind: str = "intensity") -> FeatureMap:
    """
    Deterministic per-pixel descriptors.

    ``intensity``  the image itself (L = C)
    ``grad``       intensity plus central-difference x/y gradients of the
                   channel-mean image (L = C + 2)
    ``patch3``     flattened 3x3 neighbourhood, edge-replicated, ordered
                   dy-major then dx then channel (L = 9 C)
    ``patch3n``    patch3 standardized by the image mean and std, so that the
                   dot product of two descriptors is signed
    """
    I = _as_hwc(img)
    if kind == "intensity":
        data = I.copy()
    elif kind == "grad":
        g = I.mean(axis=2)
        if min(g.shape) >= 2:
            gy, gx = np.gradient(g)
        else:
            gy = gx = np.zeros_like(g)
        data = np.concatenate([I, gx[..., None], gy[..., None]], axis=2)
    elif kind == "patch3":
        data = _patch3(I)
    elif kind == "patch3n":
        std = I.std()
        data = _patch3((I - I.mean()) / (std if std > 0 else 1.0))
    else:
        raise ValueError(f"unknown feature kind {kind!r}; expected one of {FEATURE_KINDS}")
    return FeatureMap(data, kind)


@dataclass(frozen=True)
class DepthRangeState:
    d_min: float
    d_max: float
    momentum: float = 0.99

    def __post_init__(self):
        if not (0 < self.d_min < self.d_max):
            raise ValueError(f"need 0 < d_min < d_max, got ({self.d_min}, {self.d_max})")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")

    def to_config(self) -> dict:
        return {"depth_range.min_mm": self.d_min,
                "depth_range.max_mm": self.d_max,
                "depth_range.momentum": self.momentum}

    @classmethod
    def from_config(cls, cfg) -> "DepthRangeState":
        return cls(float(cfg["depth_range.min_mm"]), float(cfg["depth_range.max_mm"]),
                   float(cfg["depth_range.momentum"]))


@dataclass
class CostVolume:
    plane_depths: np.ndarray
    costs: np.ndarray   # (P, H, W)
    valid: np.ndarray   # (P, H, W)

    def __post_init__(self):
        self.plane_depths = np.asarray(self.plane_depths, dtype=np.float64)
        if np.any(np.diff(self.plane_depths) <= 0):
            raise ValueError("plane depths must be strictly increasing")
        if self.costs.shape != self.valid.shape or self.costs.shape[0] != len(self.plane_depths):
            raise ValueError("costs, valid and plane_depths disagree")

    def hard_argmin(self) -> np.ndarray:
        """Index of the cheapest valid plane per pixel; -1 where none is valid."""
        c = np.where(self.valid, self.costs, np.inf)
        idx = c.argmin(axis=0)
        return np.where(self.valid.any(axis=0), idx, -1)


def plane_depths(state: DepthRangeState, P: int = DEFAULT_PLANES) -> np.ndarray:
    if P < 2:
        raise ValueError("need at least two planes")
    i = np.arange(P, dtype=np.float64)
    return state.d_min + i * (state.d_max - state.d_min) / (P - 1)


def build_cost_volume(target_feat: FeatureMap, source_feats, poses, K: Intrinsics,
                      state: DepthRangeState, P: int = DEFAULT_PLANES) -> CostVolume:
    """
    Mean-over-descriptor L1 between target features and source features
    warped at each fronto-parallel plane, averaged over the sources whose
    sample is in view. ``poses`` are target->source transforms.
    """
    source_feats = list(source_feats)
    poses = list(poses)
    if not source_feats:
        raise ValueError("at least one source feature map is required")
    if len(poses) != len(source_feats):
        raise ValueError("one pose per source feature map is required")
    shape = target_feat.data.shape
    for f in source_feats:
        if f.data.shape != shape:
            raise ValueError(f"feature map shape {f.data.shape} differs from target {shape}")
    H, W, L = shape
    depths = plane_depths(state, P)
    rays = pixel_rays(K, pixel_grid(H, W))  # (H, W, 3)
    costs = np.zeros((P, H, W))
    valid = np.zeros((P, H, W), dtype=bool)
    for i, d in enumerate(depths):
        total = np.zeros((H, W))
        count = np.zeros((H, W))
        for feat, M in zip(source_feats, poses):
            Y = (rays * d) @ M.rotation.T + M.translation
            z = Y[..., 2]
            front = z > 0
            with np.errstate(divide="ignore", invalid="ignore"):
                coords = np.stack([np.where(front, K.fx * Y[..., 0] / z + K.cx, np.nan),
                                   np.where(front, K.fy * Y[..., 1] / z + K.cy, np.nan)], axis=-1)
            warped, inb = bilinear_sample_many(feat.data, coords)
            ok = inb & front
            l1 = np.abs(warped - target_feat.data).mean(axis=2)
            total += np.where(ok, l1, 0.0)
            count += ok
        v = count > 0
        costs[i] = np.where(v, total / np.maximum(count, 1), 0.0)
        valid[i] = v
    return CostVolume(depths, costs, valid)


def soft_argmin_depth(cv: CostVolume, temperature: float) -> np.ndarray:
    """Softmax(-cost / T)-weighted plane depth; mid-range where nothing is valid."""
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    c = np.where(cv.valid, cv.costs, np.inf)
    cmin = c.min(axis=0)
    any_valid = np.isfinite(cmin)
    with np.errstate(invalid="ignore"):
        logits = -(c - np.where(any_valid, cmin, 0.0)) / temperature
    w = np.where(cv.valid, np.exp(logits), 0.0)
    wsum = w.sum(axis=0)
    depth = (w * cv.plane_depths[:, None, None]).sum(axis=0) / np.where(any_valid, wsum, 1.0)
    mid = 0.5 * (cv.plane_depths[0] + cv.plane_depths[-1])
    depth = np.where(any_valid, depth, mid)
    # softmax weights are convex, but guard the last ulp
    return np.clip(depth, cv.plane_depths[0], cv.plane_depths[-1])


def update_depth_range(state: DepthRangeState, batch_depths) -> DepthRangeState:
    """One EMA step toward the batch-mean of per-map minima and maxima."""
    batch = [np.asarray(d, dtype=np.float64) for d in batch_depths]
    if not batch:
        raise ValueError("empty batch")
    lo = float(np.mean([d.min() for d in batch]))
    hi = float(np.mean([d.max() for d in batch]))
    m = state.momentum
    d_min = m * state.d_min + (1 - m) * lo
    d_max = m * state.d_max + (1 - m) * hi
    if not (0 < d_min < d_max):
        raise ValueError(
            f"depth range update degenerate: d_min={d_min}, d_max={d_max} "
            f"(batch min {lo}, batch max {hi})"
        )
    return replace(state, d_min=d_min, d_max=d_max)
