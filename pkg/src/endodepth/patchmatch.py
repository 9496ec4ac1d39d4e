"""
Adaptive patchmatch: keypoints, self-correlation, offset decoding, support
domains and the patch-based photometric loss.

A support domain is a keypoint plus N sampled neighbours assumed to share
its depth. The neighbours sit at ``p + o_i + delta_i`` where ``o_i`` is a
base grid (the 3x3 ring by default) and ``delta_i`` comes from an offset
decoder. Depths are read at the members, and the *keypoint* is projected
once per member depth; the photometric error then compares the SSIM window
around the keypoint in the target with the source window around each of
those projections.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .costvolume import FeatureMap, extract_features
from .geometry import (Intrinsics, RigidTransform, _as_hwc, bilinear_footprint,
                       bilinear_sample_grad, bilinear_sample_many, pixel_rays)
from .photometric import PhotometricConfig

BASE_GRID = np.array([(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)],
                     dtype=np.float64)
SEARCH_RANGE = 8
MAX_RADIUS = 6


# -- keypoints ----------------------------------------------------------------

@dataclass
class KeypointSet:
    points: np.ndarray   # (K, 2) integer (x, y)
    scores: np.ndarray   # (K,)

    def __len__(self):
        return len(self.points)


def gradient_magnitude(img) -> np.ndarray:
    g = _as_hwc(img).mean(axis=2)
    if min(g.shape) < 2:
        return np.zeros_like(g)
    gy, gx = np.gradient(g)
    return np.hypot(gx, gy)


def detect_keypoints(img, target_count: int, cell: int = 8, factor: float = 1.5,
                     min_grad: float = 1e-3) -> KeypointSet:
    """
    Gradient-based point selection on a regular grid of cells.

    In each cell the pixel with the largest central-difference gradient
    magnitude is kept if it beats ``factor`` times the cell's median
    gradient (and ``min_grad``). Survivors are ranked by magnitude and
    truncated to ``target_count``. Ties within a cell go to the first pixel
    in row-major order.
    """
    if target_count < 1:
        raise ValueError("target_count must be >= 1")
    if cell < 2:
        raise ValueError("cell must be >= 2 (a single pixel never beats its own median)")
    mag = gradient_magnitude(img)
    H, W = mag.shape
    pts, scores = [], []
    for y0 in range(0, H, cell):
        for x0 in range(0, W, cell):
            block = mag[y0:y0 + cell, x0:x0 + cell]
            k = int(np.argmax(block))
            best = block.flat[k]
            thresh = max(factor * float(np.median(block)), min_grad)
            if best > thresh:
                by, bx = divmod(k, block.shape[1])
                pts.append((x0 + bx, y0 + by))
                scores.append(best)
    if not pts:
        return KeypointSet(np.zeros((0, 2), dtype=np.intp), np.zeros(0))
    pts = np.array(pts, dtype=np.intp)
    scores = np.array(scores)
    order = np.argsort(-scores, kind="stable")[:target_count]
    return KeypointSet(pts[order], scores[order])


# -- self-correlation ---------------------------------------------------------

@dataclass
class CorrelationVolume:
    """
    ``values[k, a, b]`` is the correlation of keypoint k with the pixel at
    displacement ``(offsets[b], offsets[a])`` i.e. rows index dy, columns dx.
    """

    values: np.ndarray        # (K, r, r)
    offsets: np.ndarray       # (r,)
    out_of_bounds: np.ndarray  # (K, r, r)
    keypoints: KeypointSet

    @property
    def search_range(self) -> int:
        return len(self.offsets)


def window_offsets(r: int = SEARCH_RANGE) -> np.ndarray:
    """Even windows span -r/2 .. r/2 - 1; there is no geometric center."""
    if r < 2 or r % 2:
        raise ValueError("search range must be even and >= 2")
    return np.arange(-r // 2, r // 2)


def correlation_volume(feat: FeatureMap, kp: KeypointSet, r: int = SEARCH_RANGE) -> CorrelationVolume:
    """dot(F(p), F(p + delta)) / L over the r x r window, border-clamped."""
    offs = window_offsets(r)
    F = feat.data
    H, W, L = F.shape
    P = np.asarray(kp.points, dtype=np.intp).reshape(-1, 2)
    if len(P) and (P.min() < 0 or np.any(P[:, 0] >= W) or np.any(P[:, 1] >= H)):
        raise ValueError("keypoints must lie inside the feature map")
    dy, dx = np.meshgrid(offs, offs, indexing="ij")
    nx = P[:, 0, None, None] + dx
    ny = P[:, 1, None, None] + dy
    oob = (nx < 0) | (nx >= W) | (ny < 0) | (ny >= H)
    nb = F[np.clip(ny, 0, H - 1), np.clip(nx, 0, W - 1)]   # (K, r, r, L)
    center = F[P[:, 1], P[:, 0]]                            # (K, L)
    vals = np.einsum("kabl,kl->kab", nb, center) / L
    return CorrelationVolume(vals, offs, oob, kp)


# -- offset decoding ----------------------------------------------------------

class OffsetDecoder(Protocol):
    def decode(self, cv: CorrelationVolume) -> np.ndarray:
        """Return (K, N, 2) offset corrections for each base-grid entry."""


def sector_assignment(offsets: np.ndarray, base_grid: np.ndarray) -> np.ndarray:
    """
    Assign each non-zero window displacement to the base direction with the
    nearest angle; the zero displacement (the keypoint itself) gets -1.
    Returns an (r, r) index map with rows indexing dy.
    """
    dy, dx = np.meshgrid(offsets, offsets, indexing="ij")
    ang = np.arctan2(dy, dx)
    base_ang = np.arctan2(base_grid[:, 1], base_grid[:, 0])
    diff = np.abs(np.angle(np.exp(1j * (ang[..., None] - base_ang))))
    sector = diff.argmin(axis=-1)
    return np.where((dx == 0) & (dy == 0), -1, sector)


def decode_offsets_softargmax(cv: CorrelationVolume, base_grid=BASE_GRID,
                              temperature: float | None = None,
                              max_radius: float = MAX_RADIUS,
                              include_center: bool = True) -> np.ndarray:
    """
    Deterministic offset decoder.

    For base direction i the window is restricted to its angular sector and
    the softmax(c / T)-weighted mean displacement inside it is taken; the
    correction is that mean minus ``o_i``, shortened to ``max_radius``.
    With ``include_center`` the zero displacement competes in every sector,
    so a direction whose cells all correlate poorly with the keypoint (the
    far side of an edge) collapses onto the keypoint. With
    ``temperature=None`` each keypoint uses T = 0.1 * max|c| over its window
    (1 when the window is all zero).
    """
    base_grid = np.asarray(base_grid, dtype=np.float64)
    sector = sector_assignment(cv.offsets, base_grid)
    dy, dx = np.meshgrid(cv.offsets, cv.offsets, indexing="ij")
    disp = np.stack([dx, dy], axis=-1).astype(np.float64)   # (r, r, 2)
    c = cv.values
    Kn = c.shape[0]
    if temperature is None:
        scale = np.abs(c).reshape(Kn, -1).max(axis=1) if Kn else np.zeros(0)
        T = 0.1 * np.where(scale > 0, scale, 1.0)
    else:
        if not temperature > 0:
            raise ValueError("temperature must be positive")
        T = np.full(Kn, float(temperature))
    out = np.zeros((Kn, len(base_grid), 2))
    for i, o in enumerate(base_grid):
        sel = sector == i
        if not sel.any():
            raise ValueError(f"base direction {o} owns no window cell")
        if include_center:
            sel = sel | (sector == -1)
        ci = c[:, sel] / T[:, None]                  # (K, m)
        ci = ci - ci.max(axis=1, keepdims=True)
        w = np.exp(ci)
        w /= w.sum(axis=1, keepdims=True)
        mean = w @ disp[sel]                          # (K, 2)
        delta = mean - o
        norm = np.linalg.norm(delta, axis=1, keepdims=True)
        shrink = np.where(norm > max_radius, max_radius / np.maximum(norm, 1e-300), 1.0)
        out[:, i] = delta * shrink
    return out


@dataclass
class SectorSoftArgmaxDecoder:
    base_grid: np.ndarray = BASE_GRID
    temperature: float | None = None
    max_radius: float = MAX_RADIUS
    include_center: bool = True

    def decode(self, cv: CorrelationVolume) -> np.ndarray:
        return decode_offsets_softargmax(cv, self.base_grid, self.temperature, self.max_radius,
                                         self.include_center)


@dataclass
class ZeroOffsetDecoder:
    """Fixed-pattern patchmatch: no corrections."""

    base_grid: np.ndarray = BASE_GRID

    def decode(self, cv: CorrelationVolume) -> np.ndarray:
        return np.zeros((cv.values.shape[0], len(self.base_grid), 2))


# -- support domains ----------------------------------------------------------

@dataclass
class SupportDomain:
    center: np.ndarray    # (2,)
    offsets: np.ndarray   # (N, 2) o_i + delta_i
    members: np.ndarray   # (N + 1, 2), center first
    clamped: bool = False
    degenerate: bool = False

    @property
    def size(self) -> int:
        return len(self.members)


def assemble_support_domain(center, delta, base_grid=BASE_GRID, shape=None) -> SupportDomain:
    """
    Members {p + o_i + delta_i} plus p itself (first). With ``shape`` given
    as (H, W), members are clamped into the image and ``clamped`` records
    whether that happened. ``degenerate`` marks domains with coincident
    members.
    """
    base_grid = np.asarray(base_grid, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64).reshape(base_grid.shape)
    p = np.asarray(center, dtype=np.float64).reshape(2)
    offsets = base_grid + delta
    members = np.vstack([p, p + offsets])
    clamped = False
    if shape is not None:
        H, W = shape
        lim = np.array([W - 1, H - 1], dtype=np.float64)
        c = np.clip(members, 0, lim)
        clamped = bool(np.any(c != members))
        members = c
    degenerate = len(np.unique(members, axis=0)) < len(members)
    return SupportDomain(p, offsets, members, clamped, degenerate)


def build_support_domains(img, kp: KeypointSet, decoder: OffsetDecoder | None = None,
                          feature_kind: str = "patch3n", r: int = SEARCH_RANGE):
    """Correlation -> decoder -> domains for every keypoint of ``img``."""
    I = _as_hwc(img)
    base = getattr(decoder, "base_grid", BASE_GRID) if decoder is not None else BASE_GRID
    if decoder is None:
        decoder = SectorSoftArgmaxDecoder()
    cv = correlation_volume(extract_features(I, feature_kind), kp, r)
    deltas = decoder.decode(cv)
    return [assemble_support_domain(p, d, base, I.shape[:2]) for p, d in zip(kp.points, deltas)]


def sample_domain_depths(depth, dom: SupportDomain) -> np.ndarray:
    vals, _ = bilinear_sample_many(np.asarray(depth, dtype=np.float64), dom.members)
    return vals[:, 0]


def export_domains(domains, path) -> None:
    """Plain-text table: kp_x kp_y then x y for every member (center first)."""
    with open(path, "w") as f:
        f.write("# kp_x kp_y member_x member_y ...\n")
        for d in domains:
            row = [d.center[0], d.center[1], *d.members.ravel()]
            f.write(" ".join(f"{v:.6f}" for v in row) + "\n")


def import_domains(path):
    domains = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            vals = np.array([float(v) for v in line.split()])
            center, members = vals[:2], vals[2:].reshape(-1, 2)
            domains.append(SupportDomain(center, members[1:] - center, members))
    return domains


# -- patch-based photometric loss ---------------------------------------------

@dataclass
class PatchLoss:
    value: float
    per_domain: np.ndarray    # (K,) min over sources; 0 where invalid
    per_source: np.ndarray    # (S, K) inf where invalid
    valid: np.ndarray         # (K,)
    best_source: np.ndarray   # (K,) -1 where invalid
    n_invalid: int


@dataclass
class _SourceTerms:
    phi: np.ndarray           # (K,)
    dphi_dd: np.ndarray       # (K, J)
    u: np.ndarray             # (K, J, 2)
    du_dd: np.ndarray         # (K, J, 2)
    resid: np.ndarray         # (K, J, C) warped - target
    dw_dd: np.ndarray         # (K, J, C)
    valid: np.ndarray         # (K, J)


def _stack_domains(domains):
    centers = np.array([d.center for d in domains], dtype=np.float64).reshape(-1, 2)
    members = np.array([d.members for d in domains], dtype=np.float64)
    if members.ndim != 3:
        raise ValueError("all support domains must have the same size")
    return centers, members


def _depth_footprint(members, H, W):
    x0, y0, fx, fy, _ = bilinear_footprint(members, H, W)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    idx = np.stack([y0 * W + x0, y0 * W + x1, y1 * W + x0, y1 * W + x1], axis=-1)
    w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=-1)
    return idx, w


def _window_offsets(window: int) -> np.ndarray:
    r = window // 2
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    return np.stack([dx.ravel(), dy.ravel()], axis=-1).astype(np.float64)   # (Q, 2)


def _target_windows(T, centers, window):
    """(K, Q, C) target values on the SSIM window around each keypoint."""
    r = window // 2
    pad = np.pad(T, ((r, r), (r, r), (0, 0)), mode="reflect")
    ci = np.rint(centers).astype(np.intp)
    off = _window_offsets(window).astype(np.intp)
    xs = ci[:, None, 0] + off[None, :, 0] + r
    ys = ci[:, None, 1] + off[None, :, 1] + r
    return pad[ys, xs]


def _source_terms(tw, src, d, rays, K: Intrinsics, M: RigidTransform,
                  cfg: PhotometricConfig, want_grad: bool) -> _SourceTerms:
    """
    Per-member error between the keypoint's target window and the source
    window around the keypoint re-projected with that member's depth. A
    member counts only if its whole source window lies inside the image.
    """
    R, tr = M.rotation, M.translation
    X = d[..., None] * rays[:, None, :]
    Y = X @ R.T + tr
    dY = rays @ R.T                                 # dY/dd, (K, 3)
    z = Y[..., 2]
    front = z > 0
    zs = np.where(front, z, 1.0)
    u = K.fx * Y[..., 0] / zs + K.cx
    v = K.fy * Y[..., 1] / zs + K.cy
    q = np.stack([np.where(front, u, np.nan), np.where(front, v, np.nan)], axis=-1)
    off = _window_offsets(cfg.ssim_window)
    Q = len(off)
    mid = Q // 2
    w, gx, gy, inb = bilinear_sample_grad(src, q[:, :, None, :] + off)      # (K, J, Q, C)
    valid = front & inb.all(axis=2) & (d > 0)
    C = w.shape[-1]
    n = valid.sum(axis=1)                           # (K,)
    nn = np.maximum(n, 1)
    t = tw[:, mid, :]                               # (K, C)
    mu_t = tw.mean(axis=1)[:, None, :]              # (K, 1, C)
    dt = tw[:, None, :, :] - mu_t[:, :, None, :]    # (K, 1, Q, C)
    var_t = (dt * dt).mean(axis=2)
    mu_s = w.mean(axis=2)                           # (K, J, C)
    ds = w - mu_s[:, :, None, :]
    var_s = (ds * ds).mean(axis=2)
    cov = (ds * dt).mean(axis=2)
    N1 = 2 * mu_t * mu_s + cfg.c1
    N2 = 2 * cov + cfg.c2
    D1 = mu_t * mu_t + mu_s * mu_s + cfg.c1
    D2 = var_t + var_s + cfg.c2
    S = N1 * N2 / (D1 * D2)
    resid = w[:, :, mid, :] - t[:, None, :]
    member = cfg.alpha * (1 - S.mean(axis=2)) / 2 + (1 - cfg.alpha) * np.abs(resid).mean(axis=2)
    phi = np.where(valid, member, 0.0).sum(axis=1) / nn
    phi = np.where(n > 0, phi, np.inf)

    dphi_dd = du_dd = dw_dd = None
    if want_grad:
        # d S / d w_q for every window sample, per channel
        e = lambda x: x[:, :, None, :]
        dN1 = 2 * mu_t / Q
        dD1 = 2 * mu_s / Q
        dS = (e(dN1 * N2) + e(N1) * 2 * dt / Q) / e(D1 * D2) \
            - e(S) * (e(dD1 * D2) + e(D1) * 2 * ds / Q) / e(D1 * D2)
        dm_dw = -cfg.alpha / 2 * dS / C             # (K, J, Q, C)
        dm_dw[:, :, mid, :] += (1 - cfg.alpha) * np.sign(resid) / C
        zz = zs * zs
        dudd = K.fx * (dY[:, None, 0] * zs - Y[..., 0] * dY[:, None, 2]) / zz
        dvdd = K.fy * (dY[:, None, 1] * zs - Y[..., 1] * dY[:, None, 2]) / zz
        dwin = gx * dudd[:, :, None, None] + gy * dvdd[:, :, None, None]
        dphi_dd = (dm_dw * dwin).sum(axis=(2, 3)) * valid / nn[:, None]
        dw_dd = dwin[:, :, mid, :]
        du_dd = np.stack([dudd, dvdd], axis=-1)
    return _SourceTerms(phi, dphi_dd, np.stack([u, v], axis=-1), du_dd, resid, dw_dd, valid)


def _evaluate(target, sources, depth, domains, K, poses, cfg, want_grad):
    T = _as_hwc(target)
    D = np.asarray(depth, dtype=np.float64)
    sources = [_as_hwc(s) for s in sources]
    if len(sources) != len(poses):
        raise ValueError("one pose per source frame is required")
    if not domains:
        raise ValueError("need at least one support domain")
    H, W = D.shape
    if T.shape[:2] != D.shape or any(s.shape != T.shape for s in sources):
        raise ValueError("target, sources and depth must share their size")
    centers, members = _stack_domains(domains)
    tw = _target_windows(T, centers, cfg.ssim_window)
    idx, wts = _depth_footprint(members, H, W)
    d = (D.ravel()[idx] * wts).sum(axis=-1)
    rays = pixel_rays(K, centers)
    terms = [_source_terms(tw, s, d, rays, K, M, cfg, want_grad) for s, M in zip(sources, poses)]
    r = cfg.ssim_window // 2
    ci = np.rint(centers)
    inside = (ci[:, 0] >= r) & (ci[:, 0] <= W - 1 - r) & (ci[:, 1] >= r) & (ci[:, 1] <= H - 1 - r)
    per_source = np.where(inside, np.stack([tm.phi for tm in terms]), np.inf)
    best = per_source.argmin(axis=0)
    valid = np.isfinite(per_source).any(axis=0)
    per_domain = np.where(valid, per_source.min(axis=0), 0.0)
    nv = int(valid.sum())
    value = float(per_domain.sum() / nv) if nv else 0.0
    loss = PatchLoss(value, per_domain, per_source, valid, np.where(valid, best, -1),
                     int(len(domains) - nv))
    return loss, terms, idx, wts


def patch_photometric_loss(target, sources, depth, domains, K: Intrinsics, poses,
                           cfg: PhotometricConfig = PhotometricConfig()) -> PatchLoss:
    """
    Mean over support domains of the per-domain photometric error, taking
    for each domain the source frame with the smaller error.

    ``sources`` and ``poses`` are lists (target->source poses); a single
    array/pose pair is accepted too. Domains with no valid member in any
    source are excluded and counted in ``n_invalid``.
    """
    if isinstance(sources, np.ndarray):
        sources = [sources]
    if isinstance(poses, RigidTransform):
        poses = [poses]
    loss, *_ = _evaluate(target, list(sources), depth, domains, K, list(poses), cfg, False)
    return loss


def patch_loss_gradient(target, sources, depth, domains, K, poses,
                        cfg: PhotometricConfig = PhotometricConfig(), fd_step: float = 1e-3):
    """
    Loss, analytic gradient w.r.t. every depth pixel, and a mask of depth
    pixels where the loss is not differentiable to within ``fd_step``
    (bilinear grid crossings, L1 kinks, visibility flips, source ties).
    """
    if isinstance(sources, np.ndarray):
        sources = [sources]
    if isinstance(poses, RigidTransform):
        poses = [poses]
    D = np.asarray(depth, dtype=np.float64)
    H, W = D.shape
    loss, terms, idx, wts = _evaluate(target, list(sources), D, domains, K, list(poses), cfg, True)
    grad = np.zeros(H * W)
    flagged = np.zeros((len(domains), idx.shape[1]), dtype=bool)
    nv = int(loss.valid.sum())
    h2 = 2 * fd_step
    for s, tm in enumerate(terms):
        chosen = loss.valid & (loss.best_source == s)
        if nv and chosen.any():
            g = np.where(chosen[:, None], tm.dphi_dd, 0.0) / nv
            grad += np.bincount(idx.ravel(), weights=(g[..., None] * wts).ravel(), minlength=H * W)
        # kinks only matter for the source that is actually used
        du = np.abs(np.nan_to_num(tm.du_dd)) * h2
        frac = np.abs(tm.u - np.rint(tm.u))
        near_grid = np.any(np.nan_to_num(frac, nan=1.0) <= du, axis=-1)
        near_l1 = np.any(np.abs(tm.resid) <= np.abs(tm.dw_dd) * h2, axis=-1) & tm.valid
        flagged |= chosen[:, None] & (near_grid | near_l1)
    if len(terms) > 1:
        ps = loss.per_source
        order = np.sort(np.where(np.isfinite(ps), ps, np.inf), axis=0)
        with np.errstate(invalid="ignore"):
            gap = order[1] - order[0]
        slope = sum(np.abs(tm.dphi_dd).sum(axis=1) for tm in terms)
        tie = loss.valid & np.isfinite(gap) & (gap <= slope * h2)
        flagged |= tie[:, None]
    site = np.zeros(H * W, dtype=bool)
    hit = (wts > 0) & flagged[..., None]
    site[idx[hit]] = True
    return loss, grad.reshape(H, W), site.reshape(H, W)
