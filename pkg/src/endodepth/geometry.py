"""
Pinhole camera geometry: projection, back-projection, bilinear inverse warping
and point-cloud generation.

Conventions used throughout the package:

    - pixel (x, y) sits at continuous coordinate (x, y); no half-pixel offset
    - images are float arrays of shape (H, W, C), depth maps (H, W), in mm
    - a RigidTransform maps points from one camera frame into another,
      X' = R @ X + t; the relative pose target->source is what warps use

Out-of-image samples are clamped to the border and reported through an
explicit validity flag; points landing behind the camera are flagged too.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

ORTHONORMAL_TOL = 1e-9


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("intrinsics must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    @property
    def inverse(self) -> np.ndarray:
        return np.array([[1.0 / self.fx, 0.0, -self.cx / self.fx],
                         [0.0, 1.0 / self.fy, -self.cy / self.fy],
                         [0.0, 0.0, 1.0]])

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float) -> "Intrinsics":
        """Square pixels, principal point at the image center."""
        f = 0.5 * (width - 1) / np.tan(np.deg2rad(hfov_deg) / 2)
        return cls(f, f, (width - 1) / 2, (height - 1) / 2, width, height)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation + translation (mm) acting as X' = R X + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("rigid transform must be finite")
        if np.max(np.abs(R.T @ R - np.eye(3))) > ORTHONORMAL_TOL:
            raise ValueError("rotation is not orthonormal")
        if np.linalg.det(R) < 0:
            raise ValueError("rotation has determinant -1 (reflection)")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_axis_angle(cls, axis_angle, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        w = np.asarray(axis_angle, dtype=np.float64)
        theta = np.linalg.norm(w)
        if theta < 1e-15:
            R = np.eye(3)
        else:
            k = w / theta
            Kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
            R = np.eye(3) + np.sin(theta) * Kx + (1 - np.cos(theta)) * Kx @ Kx
            # re-orthonormalize so the 1e-9 invariant survives large angles
            u, _, vt = np.linalg.svd(R)
            R = u @ vt
        return cls(R, translation)

    @classmethod
    def from_matrix(cls, T) -> "RigidTransform":
        T = np.asarray(T, dtype=np.float64)
        return cls(T[:3, :3], T[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        """Composition: (self @ other)(X) = self(other(X))."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def apply(self, points) -> np.ndarray:
        P = np.asarray(points, dtype=np.float64)
        return P @ self.rotation.T + self.translation

    def allclose(self, other: "RigidTransform", atol: float = 1e-9) -> bool:
        return (np.allclose(self.rotation, other.rotation, atol=atol, rtol=0)
                and np.allclose(self.translation, other.translation, atol=atol, rtol=0))

    def __repr__(self):
        return f"RigidTransform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


class Projection(NamedTuple):
    x: float
    y: float
    depth: float
    in_front: bool


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite input")


def project(p, depth: float, K: Intrinsics, M: RigidTransform) -> Projection:
    """
    Map target pixel ``p`` at ``depth`` into the view related by ``M``.

    Computes K M (depth K^-1 p~), dehomogenized. ``in_front`` is False when
    the transformed point has z <= 0; the coordinates are then meaningless
    but still returned so callers can decide what to do.
    """
    p = np.asarray(p, dtype=np.float64)
    _check_finite(p, depth)
    if depth <= 0:
        raise ValueError(f"depth must be positive, got {depth}")
    if not (0 <= p[0] <= K.width - 1 and 0 <= p[1] <= K.height - 1):
        raise ValueError(f"pixel {tuple(p)} outside the {K.width}x{K.height} image")
    X = back_project(p, depth, K)
    Y = M.apply(X)
    z = Y[2]
    if z <= 0:
        return Projection(float("nan"), float("nan"), float(z), False)
    return Projection(K.fx * Y[0] / z + K.cx, K.fy * Y[1] / z + K.cy, float(z), True)


def back_project(p, depth: float, K: Intrinsics) -> np.ndarray:
    """Pixel + depth -> 3D point in the camera frame (mm)."""
    p = np.asarray(p, dtype=np.float64)
    _check_finite(p, depth)
    if depth <= 0:
        raise ValueError(f"depth must be positive, got {depth}")
    return np.array([(p[0] - K.cx) / K.fx * depth, (p[1] - K.cy) / K.fy * depth, depth])


def pixel_rays(K: Intrinsics, pixels) -> np.ndarray:
    """Rays K^-1 p~ (z = 1) for an (..., 2) array of pixel coordinates."""
    p = np.asarray(pixels, dtype=np.float64)
    return np.stack([(p[..., 0] - K.cx) / K.fx, (p[..., 1] - K.cy) / K.fy,
                     np.ones(p.shape[:-1])], axis=-1)


def pixel_grid(height: int, width: int) -> np.ndarray:
    """(H, W, 2) array of (x, y) pixel coordinates."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    return np.stack([xs, ys], axis=-1)


def project_points(pixels, depth, K: Intrinsics, M: RigidTransform):
    """
    Vectorized projection of pixels (..., 2) with depths (...).

    Returns (coords (..., 2), z (...), in_front (...)). Coordinates are NaN
    where the point is behind the camera.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    _check_finite(pixels, depth)
    X = pixel_rays(K, pixels) * depth[..., None]
    Y = X @ M.rotation.T + M.translation
    z = Y[..., 2]
    in_front = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(in_front, K.fx * Y[..., 0] / z + K.cx, np.nan)
        v = np.where(in_front, K.fy * Y[..., 1] / z + K.cy, np.nan)
    return np.stack([u, v], axis=-1), z, in_front


def _as_hwc(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.size == 0:
        raise ValueError(f"expected a non-empty (H, W[, C]) array, got shape {a.shape}")
    return a


def bilinear_footprint(coords, height: int, width: int):
    """
    Clamp coordinates to the image and return the bilinear stencil.

    Returns ``(x0, y0, fx, fy, in_bounds)`` where (x0, y0) is the top-left
    corner of the 2x2 stencil and (fx, fy) the fractional weights. NaN
    coordinates are treated as out of bounds and sampled at the origin.
    """
    c = np.asarray(coords, dtype=np.float64)
    x, y = c[..., 0], c[..., 1]
    finite = np.isfinite(x) & np.isfinite(y)
    x = np.where(finite, x, 0.0)
    y = np.where(finite, y, 0.0)
    in_bounds = finite & (x >= 0) & (x <= width - 1) & (y >= 0) & (y <= height - 1)
    xc = np.clip(x, 0, width - 1)
    yc = np.clip(y, 0, height - 1)
    x0 = np.clip(np.floor(xc), 0, max(width - 2, 0)).astype(np.intp)
    y0 = np.clip(np.floor(yc), 0, max(height - 2, 0)).astype(np.intp)
    return x0, y0, xc - x0, yc - y0, in_bounds


def bilinear_sample_many(img, coords):
    """
    Sample ``img`` (H, W[, C]) at coordinates (..., 2).

    Returns values of shape (..., C) and the in-bounds flag (...).
    """
    a = _as_hwc(img)
    H, W, _ = a.shape
    x0, y0, fx, fy, inb = bilinear_footprint(coords, H, W)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = fx[..., None]
    fy = fy[..., None]
    top = a[y0, x0] * (1 - fx) + a[y0, x1] * fx
    bot = a[y1, x0] * (1 - fx) + a[y1, x1] * fx
    return top * (1 - fy) + bot * fy, inb


def bilinear_sample_grad(img, coords):
    """
    Values plus derivatives w.r.t. x and y at coordinates (..., 2).

    Derivatives are one-sided (from the stencil's top-left cell) at exact
    integer coordinates and zero where the coordinate was clamped.
    """
    a = _as_hwc(img)
    H, W, _ = a.shape
    x0, y0, fx, fy, inb = bilinear_footprint(coords, H, W)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx_ = fx[..., None]
    fy_ = fy[..., None]
    i00, i01, i10, i11 = a[y0, x0], a[y0, x1], a[y1, x0], a[y1, x1]
    top = i00 * (1 - fx_) + i01 * fx_
    bot = i10 * (1 - fx_) + i11 * fx_
    val = top * (1 - fy_) + bot * fy_
    dx = (i01 - i00) * (1 - fy_) + (i11 - i10) * fy_
    dy = bot - top
    c = np.asarray(coords, dtype=np.float64)
    ok_x = (c[..., 0] > 0) & (c[..., 0] < W - 1)
    ok_y = (c[..., 1] > 0) & (c[..., 1] < H - 1)
    dx = np.where(ok_x[..., None], dx, 0.0)
    dy = np.where(ok_y[..., None], dy, 0.0)
    return val, dx, dy, inb


def bilinear_sample(img, q):
    """
    Bilinear sample at one subpixel coordinate ``q = (x, y)``.

    Returns ``(value, in_bounds)``; value is a scalar for single-channel
    input and a (C,) array otherwise.
    """
    a = np.asarray(img, dtype=np.float64)
    val, inb = bilinear_sample_many(a, np.asarray(q, dtype=np.float64)[None])
    v = val[0]
    if a.ndim == 2:
        v = float(v[0])
    return v, bool(inb[0])


def synthesize_view(target_depth, src, K: Intrinsics, M: RigidTransform):
    """
    Inverse-warp ``src`` into the target view.

    ``M`` is the target->source pose. Works for any channel count, so
    feature maps can be warped as well as images. Returns the warped array
    with the shape of ``src`` and a validity mask (in bounds and in front).
    """
    D = np.asarray(target_depth, dtype=np.float64)
    s = np.asarray(src, dtype=np.float64)
    if D.shape != s.shape[:2]:
        raise ValueError(f"depth {D.shape} and source {s.shape[:2]} disagree")
    H, W = D.shape
    coords, _, in_front = project_points(pixel_grid(H, W), D, K, M)
    warped, inb = bilinear_sample_many(s, coords)
    if s.ndim == 2:
        warped = warped[..., 0]
    return warped, inb & in_front


def depth_to_pointcloud(depth, K: Intrinsics, color=None):
    """
    Back-project every pixel; row-major order.

    Returns ``points`` (H*W, 3) and, when ``color`` is given, ``colors``
    (H*W, C); otherwise ``colors`` is None.
    """
    D = np.asarray(depth, dtype=np.float64)
    if D.ndim != 2:
        raise ValueError("depth must be (H, W)")
    if not np.all(np.isfinite(D)) or np.any(D <= 0):
        raise ValueError("depth must be finite and positive")
    H, W = D.shape
    pts = pixel_rays(K, pixel_grid(H, W)) * D[..., None]
    colors = None
    if color is not None:
        colors = _as_hwc(color).reshape(H * W, -1)
    return pts.reshape(H * W, 3), colors
