"""
Procedural multi-view scenes with exact depth and pose.

Geometry is ray-cast analytically and textures are solid functions of the
world point, so a surface point has the same intensity in every view
(Lambertian, no shading). That makes photoconsistency exact up to the
interpolation error of the warp.

The world frame is the frame of a camera with identity pose. Each view
stores its world->camera transform; ``relative_pose`` gives target->source.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Intrinsics, RigidTransform, pixel_grid, pixel_rays
from .teaching import color_jitter, gamma_correct

GEOMETRIES = ("plane", "two_plane", "sphere_on_plane")
TEXTURES = ("checker", "sinusoid", "noise", "constant")

# surface ids in the rendered ``surface`` map
NEAR, FAR, WALL, SPHERE = 0, 1, 2, 3


@dataclass(frozen=True)
class SceneSpec:
    """
    ``depth`` is the plane depth (plane), the near plane (two_plane) or the
    background plane (sphere_on_plane). ``far_depth`` is the second plane of
    the step, which occupies world x >= ``edge_x``. ``albedo`` maps surface
    id -> mean intensity; ``contrast`` is the texture amplitude.
    """

    geometry: str = "plane"
    depth: float = 100.0
    far_depth: float = 130.0
    edge_x: float = 0.0
    sphere_center: tuple = (0.0, 0.0, 90.0)
    sphere_radius: float = 20.0
    texture: str = "sinusoid"
    texture_scale: float = 8.0
    contrast: float = 0.35
    albedo: tuple = (0.5, 0.5, 0.5, 0.5)
    channels: int = 1
    intrinsics: Intrinsics = field(default_factory=lambda: Intrinsics.from_fov(128, 96, 60.0))
    poses: tuple = (RigidTransform.identity(),)
    rng_seed: int = 0
    depth_range: tuple = (40.0, 150.0)

    def __post_init__(self):
        if self.geometry not in GEOMETRIES:
            raise ValueError(f"unknown geometry {self.geometry!r}")
        if self.texture not in TEXTURES:
            raise ValueError(f"unknown texture {self.texture!r}")
        if not self.poses:
            raise ValueError("need at least one pose")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        lo, hi = self.depth_range
        depths = [self.depth]
        if self.geometry == "two_plane":
            depths.append(self.far_depth)
            if self.far_depth <= self.depth:
                raise ValueError("far_depth must exceed depth")
        if self.geometry == "sphere_on_plane":
            if self.sphere_center[2] + self.sphere_radius >= self.depth:
                raise ValueError("sphere must lie in front of the background plane")
            depths.append(self.sphere_center[2] - self.sphere_radius)
        for d in depths:
            if not lo <= d <= hi:
                raise ValueError(f"depth {d} outside configured range {self.depth_range}")
        if len(self.albedo) < 4:
            raise ValueError("albedo needs one entry per surface id (4)")
        if self.texture_scale <= 0:
            raise ValueError("texture_scale must be positive")


@dataclass
class View:
    image: np.ndarray      # (H, W, C)
    depth: np.ndarray      # (H, W) mm
    pose: RigidTransform   # world -> camera
    surface: np.ndarray    # (H, W) surface ids


def relative_pose(views, target: int, source: int) -> RigidTransform:
    """target-camera -> source-camera transform."""
    return views[source].pose @ views[target].pose.inverse()


def translated_poses(offsets) -> tuple:
    """World->camera poses for cameras displaced by ``offsets`` (mm) without rotation."""
    return tuple(RigidTransform(np.eye(3), -np.asarray(o, dtype=np.float64)) for o in offsets)


# -- ray casting --------------------------------------------------------------

def _ray_cast(spec: SceneSpec, origin, dirs):
    """Smallest positive hit along ``origin + s * dirs``; returns (s, surface id)."""
    inf = np.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        if spec.geometry == "plane":
            s = (spec.depth - origin[2]) / dirs[..., 2]
            s = np.where(s > 0, s, inf)
            sid = np.full(s.shape, NEAR)
        elif spec.geometry == "two_plane":
            cands = []
            s0 = (spec.depth - origin[2]) / dirs[..., 2]
            x0 = origin[0] + s0 * dirs[..., 0]
            cands.append(np.where((s0 > 0) & (x0 < spec.edge_x), s0, inf))
            s1 = (spec.far_depth - origin[2]) / dirs[..., 2]
            x1 = origin[0] + s1 * dirs[..., 0]
            cands.append(np.where((s1 > 0) & (x1 >= spec.edge_x), s1, inf))
            sw = (spec.edge_x - origin[0]) / dirs[..., 0]
            zw = origin[2] + sw * dirs[..., 2]
            cands.append(np.where((sw > 0) & (zw >= spec.depth) & (zw <= spec.far_depth), sw, inf))
            C = np.stack(cands)
            sid = np.array([NEAR, FAR, WALL])[C.argmin(axis=0)]
            s = C.min(axis=0)
        else:
            sb = (spec.depth - origin[2]) / dirs[..., 2]
            sb = np.where(sb > 0, sb, inf)
            oc = origin - np.asarray(spec.sphere_center, dtype=np.float64)
            a = (dirs * dirs).sum(-1)
            b = 2 * (dirs * oc).sum(-1)
            c = oc @ oc - spec.sphere_radius ** 2
            disc = b * b - 4 * a * c
            root = np.sqrt(np.where(disc >= 0, disc, 0.0))
            s_near = (-b - root) / (2 * a)
            s_far = (-b + root) / (2 * a)
            ss = np.where(s_near > 0, s_near, s_far)
            ss = np.where((disc >= 0) & (ss > 0), ss, inf)
            sid = np.where(ss < sb, SPHERE, NEAR)
            s = np.minimum(ss, sb)
    if not np.all(np.isfinite(s)):
        raise ValueError("some rays miss the scene; check the poses")
    return s, sid


def scene_depth_at(spec: SceneSpec, pose: RigidTransform, coords) -> np.ndarray:
    """Exact depth seen by the camera ``pose`` at subpixel ``coords`` (..., 2)."""
    rays = pixel_rays(spec.intrinsics, coords)
    Rt = pose.rotation.T
    origin = -Rt @ pose.translation
    s, _ = _ray_cast(spec, origin, rays @ Rt.T)
    # camera-frame rays have unit z, so the ray parameter is the depth
    return s


def scene_points(spec: SceneSpec, pose: RigidTransform, coords):
    """World points and surface ids hit at ``coords`` for the given camera."""
    rays = pixel_rays(spec.intrinsics, coords)
    Rt = pose.rotation.T
    origin = -Rt @ pose.translation
    dirs = rays @ Rt.T
    s, sid = _ray_cast(spec, origin, dirs)
    return origin + s[..., None] * dirs, s, sid


# -- textures -----------------------------------------------------------------

class _ValueNoise:
    """Seeded 3D value noise on an integer lattice with smoothstep blending."""

    def __init__(self, seed: int, size: int = 256):
        rng = np.random.default_rng(seed)
        self.perm = np.concatenate([rng.permutation(size)] * 2)
        self.values = rng.uniform(-1.0, 1.0, size)
        self.size = size

    def _hash(self, ix, iy, iz):
        p, n = self.perm, self.size
        return self.values[p[(p[(p[ix % n] + iy) % n] + iz) % n]]

    def __call__(self, P):
        base = np.floor(P).astype(np.int64)
        f = P - base
        f = f * f * (3 - 2 * f)
        out = 0.0
        for dx in (0, 1):
            wx = f[..., 0] if dx else 1 - f[..., 0]
            for dy in (0, 1):
                wy = f[..., 1] if dy else 1 - f[..., 1]
                for dz in (0, 1):
                    wz = f[..., 2] if dz else 1 - f[..., 2]
                    out = out + wx * wy * wz * self._hash(base[..., 0] + dx, base[..., 1] + dy,
                                                           base[..., 2] + dz)
        return out


def _texture(spec: SceneSpec, P, sid, channel: int):
    scale = spec.texture_scale
    if spec.texture == "constant":
        t = np.zeros(P.shape[:-1])
    elif spec.texture == "checker":
        q = np.floor(P / scale).astype(np.int64).sum(-1)
        t = np.where(q % 2 == 0, 0.5, -0.5) * (1 if channel % 2 == 0 else -1)
    elif spec.texture == "sinusoid":
        rng = np.random.default_rng([spec.rng_seed, channel])
        t = np.zeros(P.shape[:-1])
        # three orientations at periods scale, 1.7 scale, 2.9 scale
        for k, period in enumerate((1.0, 1.7, 2.9)):
            ang = rng.uniform(0, np.pi)
            phase = rng.uniform(0, 2 * np.pi)
            kvec = np.array([np.cos(ang), np.sin(ang), 0.6 * np.cos(ang + k)]) / (period * scale)
            t = t + np.sin(2 * np.pi * (P @ kvec) + phase) / 3
        t = t * 0.5
    else:
        noise = _ValueNoise(spec.rng_seed * 7919 + channel)
        t = 0.65 * noise(P / scale) + 0.35 * noise(P / (0.5 * scale) + 17.0)
        t = t * 0.5
    albedo = np.asarray(spec.albedo, dtype=np.float64)[sid]
    return np.clip(albedo + 2 * spec.contrast * t, 0.0, 1.0)


def render_view(spec: SceneSpec, pose: RigidTransform) -> View:
    K = spec.intrinsics
    P, depth, sid = scene_points(spec, pose, pixel_grid(K.height, K.width))
    img = np.stack([_texture(spec, P, sid, c) for c in range(spec.channels)], axis=-1)
    return View(img, depth, pose, sid)


def render(spec: SceneSpec):
    """One View per pose of the scene."""
    return [render_view(spec, M) for M in spec.poses]


# -- perturbations ------------------------------------------------------------

@dataclass(frozen=True)
class Perturbation:
    """
    ``kind`` is identity, gamma, jitter or occluder. ``views`` selects the
    view indices to perturb (all when None). Jitter parameters are drawn from
    the seed when ``jitter`` is None; ``rect`` is (x0, y0, w, h) for occluders.
    """

    kind: str = "identity"
    gamma: float = 1.5
    jitter: tuple | None = None
    rect: tuple = (0, 0, 8, 8)
    fill: float = 0.0
    views: tuple | None = None


def perturb_views(views, perturbation: Perturbation, seed: int = 0):
    """
    Apply appearance perturbations per view.

    Returns new views plus one occlusion mask per view (True = unoccluded),
    so occluder accounting can be checked.
    """
    rng = np.random.default_rng(seed)
    out, masks = [], []
    for i, v in enumerate(views):
        img = v.image.copy()
        R = np.ones(v.depth.shape, dtype=bool)
        apply = perturbation.views is None or i in perturbation.views
        if apply and perturbation.kind == "gamma":
            img = gamma_correct(img, perturbation.gamma)
        elif apply and perturbation.kind == "jitter":
            params = perturbation.jitter
            if params is None:
                params = (rng.uniform(-0.2, 0.2), rng.uniform(0.8, 1.25),
                          rng.uniform(0.8, 1.2), rng.uniform(-0.05, 0.05))
            img = color_jitter(img, *params)
        elif apply and perturbation.kind == "occluder":
            x0, y0, w, h = perturbation.rect
            R[y0:y0 + h, x0:x0 + w] = False
            img[~R] = perturbation.fill
        elif perturbation.kind not in ("identity", "gamma", "jitter", "occluder"):
            raise ValueError(f"unknown perturbation {perturbation.kind!r}")
        out.append(replace(v, image=img))
        masks.append(R)
    return out, masks


# -- ready-made fixtures ------------------------------------------------------

def plane_two_view(width: int = 128, height: int = 96, depth: float = 100.0,
                   baseline: float = 8.0, texture: str = "sinusoid", channels: int = 1,
                   seed: int = 0, hfov: float = 60.0) -> SceneSpec:
    return SceneSpec(geometry="plane", depth=depth, texture=texture, channels=channels,
                     intrinsics=Intrinsics.from_fov(width, height, hfov),
                     poses=translated_poses([(0, 0, 0), (baseline, 0, 0)]), rng_seed=seed)


def two_plane_scene(width: int = 64, height: int = 64, near: float = 60.0, far: float = 90.0,
                    baseline: float = 5.0, texture: str = "sinusoid", channels: int = 1,
                    albedo=(0.62, 0.38, 0.5, 0.5), contrast: float = 0.3,
                    texture_scale: float = 6.0, seed: int = 0, hfov: float = 65.0) -> SceneSpec:
    """Target view in the middle, one source on each side (views 1 and 2)."""
    return SceneSpec(geometry="two_plane", depth=near, far_depth=far, edge_x=0.0,
                     texture=texture, texture_scale=texture_scale, contrast=contrast,
                     albedo=tuple(albedo), channels=channels,
                     intrinsics=Intrinsics.from_fov(width, height, hfov),
                     poses=translated_poses([(0, 0, 0), (-baseline, 0, 0), (baseline, 0, 0)]),
                     rng_seed=seed)
