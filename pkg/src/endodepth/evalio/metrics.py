"""
Depth evaluation: median scaling, clipping and the five standard error
measures (Abs Rel, Sq Rel, RMSE, RMSE log, delta < 1.25).

``d*`` below is the ground truth and ``d`` the prediction.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

DELTA_THRESHOLD = 1.25
MIN_DEPTH = 1e-3
METRIC_NAMES = ("abs_rel", "sq_rel", "rmse", "rmse_log", "delta")


@dataclass(frozen=True)
class MetricsReport:
    abs_rel: float
    sq_rel: float
    rmse: float         # mm
    rmse_log: float
    delta: float        # percent of pixels with max(d*/d, d/d*) < 1.25
    n: int

    def as_dict(self) -> dict:
        return asdict(self)

    def row(self) -> list:
        return [getattr(self, k) for k in METRIC_NAMES]


def _valid(d):
    return np.isfinite(d) & (d > 0)


def median_scale(pred, gt):
    """
    Multiply ``pred`` by median(gt) / median(pred), medians taken over
    pixels that are finite and positive in both maps.
    """
    P = np.asarray(pred, dtype=np.float64)
    G = np.asarray(gt, dtype=np.float64)
    if P.shape != G.shape:
        raise ValueError(f"shape mismatch: {P.shape} vs {G.shape}")
    ok = _valid(P) & _valid(G)
    if not ok.any():
        raise ValueError("no pixel is valid in both maps")
    mp, mg = np.median(P[ok]), np.median(G[ok])
    factor = float(mg / mp)
    return P * factor, factor


def compute_metrics(pred, gt, clip_mm: float = 150.0,
                    mask_gt_beyond_clip: bool = True) -> MetricsReport:
    """
    Errors over ground-truth-valid pixels, with the prediction clipped to
    [MIN_DEPTH, clip_mm]. With ``mask_gt_beyond_clip`` ground-truth pixels
    deeper than ``clip_mm`` are left out. No scaling happens here; call
    ``median_scale`` first for scale-ambiguous predictions.
    """
    P = np.asarray(pred, dtype=np.float64)
    G = np.asarray(gt, dtype=np.float64)
    if P.shape != G.shape:
        raise ValueError(f"shape mismatch: {P.shape} vs {G.shape}")
    if not clip_mm > MIN_DEPTH:
        raise ValueError("clip_mm must exceed the minimum depth")
    mask = _valid(G) & np.isfinite(P)
    if mask_gt_beyond_clip:
        mask &= G <= clip_mm
    n = int(mask.sum())
    if n == 0:
        raise ValueError("no valid ground-truth pixel to evaluate")
    g = G[mask]
    d = np.clip(P[mask], MIN_DEPTH, clip_mm)
    err = d - g
    ratio = np.maximum(g / d, d / g)
    return MetricsReport(
        abs_rel=float(np.mean(np.abs(err) / g)),
        sq_rel=float(np.mean(err * err / g)),
        rmse=float(np.sqrt(np.mean(err * err))),
        rmse_log=float(np.sqrt(np.mean((np.log(g) - np.log(d)) ** 2))),
        delta=float(100.0 * np.mean(ratio < DELTA_THRESHOLD)),
        n=n,
    )


def evaluate(pred, gt, clip_mm: float = 150.0, median_scaling: bool = True,
             mask_gt_beyond_clip: bool = True) -> MetricsReport:
    """Optional median scaling followed by ``compute_metrics``."""
    P = median_scale(pred, gt)[0] if median_scaling else pred
    return compute_metrics(P, gt, clip_mm, mask_gt_beyond_clip)
