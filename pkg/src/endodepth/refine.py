"""
Total objective, its gradient with respect to the depth map, and a
coarse-to-fine gradient-descent depth refiner.

The objective is

    L = l1 * L_ph + l2 * L_ct + l3 * L_st + l4 * L_es

with the patch photometric loss, cross-teaching against an external teacher
depth, self-teaching against a frozen reference depth (the original-input
branch) under an occlusion mask, and edge-aware smoothness. Terms whose
inputs are absent (no teacher, no reference) evaluate to zero.

The depth being optimized is the student in cross-teaching and the
perturbed-input branch in self-teaching; the teacher and the reference are
constants and always receive exactly zero gradient.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .geometry import Intrinsics, _as_hwc
from .patchmatch import patch_loss_gradient, patch_photometric_loss
from .photometric import PhotometricConfig, edge_aware_smoothness, edge_aware_smoothness_grad
from .teaching import DEFAULT_EPS, cross_teaching_loss, self_teaching_loss

TERMS = ("ph", "ct", "st", "es")


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 0.02
    lambda3: float = 0.002
    lambda4: float = 0.0001

    def __post_init__(self):
        if min(self.as_tuple()) < 0:
            raise ValueError("loss weights must be non-negative")

    def as_tuple(self):
        return (self.lambda1, self.lambda2, self.lambda3, self.lambda4)

    def as_dict(self):
        return dict(zip(TERMS, self.as_tuple()))


@dataclass
class SceneInputs:
    """Everything the objective needs besides the depth being optimized."""

    target: np.ndarray
    sources: list
    poses: list                 # target -> source
    K: Intrinsics
    domains: list
    teacher: np.ndarray | None = None
    reference: np.ndarray | None = None     # frozen original-branch depth
    occlusion: np.ndarray | None = None     # True = unoccluded
    photometric: PhotometricConfig = field(default_factory=PhotometricConfig)
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        self.target = _as_hwc(self.target)
        self.sources = [_as_hwc(s) for s in self.sources]
        if len(self.sources) != len(self.poses):
            raise ValueError("one pose per source frame is required")


@dataclass
class LossReport:
    total: float
    ph: float
    ct: float
    st: float
    es: float
    counts: dict

    def term(self, name: str) -> float:
        return getattr(self, name)


@dataclass
class GradientReport:
    total: np.ndarray
    terms: dict             # unweighted per-term gradients
    flagged: np.ndarray     # depth pixels at or near a kink
    operands: dict          # gradients of the stop-gradient operands (all zero)
    mode: str
    loss: LossReport        # objective at the same depth


def _st_mask(scene: SceneInputs, shape):
    return scene.occlusion if scene.occlusion is not None else np.ones(shape, dtype=bool)


def total_loss(depth, scene: SceneInputs, weights: LossWeights = LossWeights()) -> LossReport:
    D = np.asarray(depth, dtype=np.float64)
    lam = weights.as_dict()
    vals = dict.fromkeys(TERMS, 0.0)
    counts = dict.fromkeys(TERMS, 0)
    if lam["ph"] > 0 and scene.domains:
        pl = patch_photometric_loss(scene.target, scene.sources, D, scene.domains, scene.K,
                                    scene.poses, scene.photometric)
        vals["ph"] = pl.value
        counts["ph"] = int(pl.valid.sum())
    if lam["ct"] > 0 and scene.teacher is not None:
        ct = cross_teaching_loss(D, scene.teacher, scene.eps)
        vals["ct"], counts["ct"] = ct.value, ct.count
    if lam["st"] > 0 and scene.reference is not None:
        st = self_teaching_loss(scene.reference, D, _st_mask(scene, D.shape), scene.eps)
        vals["st"], counts["st"] = st.value, st.count
    if lam["es"] > 0:
        vals["es"] = edge_aware_smoothness(D, scene.target)
        counts["es"] = D.size
    total = sum(lam[k] * vals[k] for k in TERMS)
    return LossReport(total, vals["ph"], vals["ct"], vals["st"], vals["es"], counts)


def _analytic(D, scene, weights, h):
    """Per-term gradients, kink flags and the loss report, in one pass."""
    lam = weights.as_dict()
    terms = {k: np.zeros_like(D) for k in TERMS}
    vals = dict.fromkeys(TERMS, 0.0)
    counts = dict.fromkeys(TERMS, 0)
    flagged = np.zeros(D.shape, dtype=bool)
    if lam["ph"] > 0 and scene.domains:
        pl, g, f = patch_loss_gradient(scene.target, scene.sources, D, scene.domains, scene.K,
                                       scene.poses, scene.photometric, fd_step=h)
        terms["ph"], flagged = g, flagged | f
        vals["ph"], counts["ph"] = pl.value, int(pl.valid.sum())
    if lam["ct"] > 0 and scene.teacher is not None:
        ct = cross_teaching_loss(D, scene.teacher, scene.eps)
        terms["ct"] = ct.gradient("student")
        vals["ct"], counts["ct"] = ct.value, ct.count
        flagged |= np.abs(D - scene.teacher) <= 2 * h
    if lam["st"] > 0 and scene.reference is not None:
        R = _st_mask(scene, D.shape)
        st = self_teaching_loss(scene.reference, D, R, scene.eps)
        terms["st"] = st.gradient("transformed")
        vals["st"], counts["st"] = st.value, st.count
        flagged |= R & (np.abs(D - scene.reference) <= 2 * h)
    if lam["es"] > 0:
        v, g, f = edge_aware_smoothness_grad(D, scene.target, fd_step=h)
        terms["es"], flagged = g, flagged | f
        vals["es"], counts["es"] = v, D.size
    total = sum(lam[k] * vals[k] for k in TERMS)
    report = LossReport(total, vals["ph"], vals["ct"], vals["st"], vals["es"], counts)
    return terms, flagged, report


def _finite_difference(D, scene, weights, h):
    terms = {k: np.zeros_like(D) for k in TERMS}
    work = D.copy()
    for i in np.ndindex(D.shape):
        d0 = work[i]
        work[i] = d0 + h
        up = total_loss(work, scene, weights)
        work[i] = d0 - h
        dn = total_loss(work, scene, weights)
        work[i] = d0
        for k in TERMS:
            terms[k][i] = (up.term(k) - dn.term(k)) / (2 * h)
    return terms


def loss_gradient_wrt_depth(depth, scene: SceneInputs, weights: LossWeights = LossWeights(),
                            mode: str = "analytic", h: float = 1e-3) -> GradientReport:
    """
    Gradient of the total objective w.r.t. every depth pixel.

    ``mode="analytic"`` chains bilinear sampling, projection and the patch
    SSIM/L1 error; ``mode="fd"`` uses central differences with step ``h``
    (mm). ``flagged`` marks pixels where a +/- ``h`` perturbation crosses a
    non-differentiable point; the analytic value there is a one-sided
    derivative and a finite difference is not expected to match it.
    """
    D = np.asarray(depth, dtype=np.float64)
    if not np.all(D > 0):
        raise ValueError("depth must be positive")
    if mode == "analytic":
        terms, flagged, report = _analytic(D, scene, weights, h)
    elif mode == "fd":
        terms = _finite_difference(D, scene, weights, h)
        _, flagged, report = _analytic(D, scene, weights, h)
    else:
        raise ValueError(f"unknown gradient mode {mode!r}")
    lam = weights.as_dict()
    total = sum(lam[k] * terms[k] for k in TERMS)
    operands = {}
    if scene.teacher is not None:
        operands["teacher"] = cross_teaching_loss(D, scene.teacher, scene.eps).gradient("teacher")
    if scene.reference is not None:
        operands["reference"] = self_teaching_loss(
            scene.reference, D, _st_mask(scene, D.shape), scene.eps).gradient("original")
    return GradientReport(total, terms, flagged, operands, mode, report)


# -- coarse-to-fine refinement ------------------------------------------------

@dataclass(frozen=True)
class RefineConfig:
    levels: int = 3
    factor: int = 4
    iterations: tuple | int = (50, 100, 350)
    step_size: tuple | float = (3e4, 3e5, 3e5)
    gradient_mode: str = "analytic"
    fd_step: float = 1e-3
    depth_range: tuple = (40.0, 150.0)

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.factor < 1:
            raise ValueError("factor must be >= 1")
        if min(self.per_level("step_size")) <= 0:
            raise ValueError("step size must be positive")
        if min(self.per_level("iterations")) < 0:
            raise ValueError("iterations must be >= 0")
        if self.fd_step <= 0:
            raise ValueError("fd step must be positive")
        if self.gradient_mode not in ("analytic", "fd"):
            raise ValueError(f"unknown gradient mode {self.gradient_mode!r}")
        lo, hi = self.depth_range
        if not 0 < lo < hi:
            raise ValueError("invalid depth range")

    def per_level(self, name: str) -> tuple:
        v = getattr(self, name)
        if np.isscalar(v):
            return (v,) * self.levels
        v = tuple(v)
        if len(v) != self.levels:
            raise ValueError(f"{name} needs one entry per level")
        return v


@dataclass
class RefineResult:
    depth: np.ndarray
    trace: list           # LossReport before each step, plus the final state
    level_of: list        # pyramid level of each trace entry


def interp_matrix(n: int, nc: int) -> np.ndarray:
    """(n, nc) linear interpolation from nc evenly spread nodes to n samples."""
    if nc == n:
        return np.eye(n)
    if nc == 1:
        return np.ones((n, 1))
    x = np.arange(n) * (nc - 1) / (n - 1)
    i0 = np.minimum(np.floor(x).astype(int), nc - 2)
    f = x - i0
    A = np.zeros((n, nc))
    A[np.arange(n), i0] = 1 - f
    A[np.arange(n), i0 + 1] += f
    return A


def _coarse_size(n: int, f: int) -> int:
    return n if f == 1 else int(np.ceil((n - 1) / f)) + 1


def refine_depth(initial, scene: SceneInputs, config: RefineConfig = RefineConfig(),
                 weights: LossWeights = LossWeights(), callback=None) -> RefineResult:
    """
    Plain gradient descent, coarse to fine.

    At each level the depth is ``base + Ay @ G @ Ax.T`` where ``G`` is a
    correction on a grid ``factor`` times coarser than the next level (the
    last level is full resolution) and ``base`` is the result so far. Depths
    are projected onto [d_min / 2, 2 d_max] after every step.
    """
    D = np.array(initial, dtype=np.float64)
    H, W = D.shape
    lo, hi = config.depth_range[0] / 2, 2 * config.depth_range[1]
    D = np.clip(D, lo, hi)
    trace, level_of = [], []
    steps = config.per_level("step_size")
    iters = config.per_level("iterations")
    for lvl in range(config.levels):
        f = config.factor ** (config.levels - 1 - lvl)
        Ay = interp_matrix(H, _coarse_size(H, f))
        Ax = interp_matrix(W, _coarse_size(W, f))
        base = D.copy()
        G = np.zeros((Ay.shape[1], Ax.shape[1]))
        for _ in range(iters[lvl]):
            rep = loss_gradient_wrt_depth(D, scene, weights, config.gradient_mode, config.fd_step)
            trace.append(rep.loss)
            level_of.append(lvl)
            G -= steps[lvl] * (Ay.T @ rep.total @ Ax)
            D = np.clip(base + Ay @ G @ Ax.T, lo, hi)
            if callback is not None:
                callback(lvl, len(trace), D)
    trace.append(total_loss(D, scene, weights))
    level_of.append(config.levels - 1)
    return RefineResult(D, trace, level_of)


def write_trace_csv(trace, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "total", *TERMS])
        for i, r in enumerate(trace):
            w.writerow([i, repr(r.total), *(repr(r.term(k)) for k in TERMS)])
