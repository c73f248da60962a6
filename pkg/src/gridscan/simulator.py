"""Synthetic capture rendering and training-style augmentation.

World frame: x right, y down, z forward; camera pixel axes align with
world x/y when the pose is identity. A capture ray-casts the scene per
camera pixel, back-projects hits into the projector, samples the
rasterized pattern bilinearly, and derives all ground-truth maps
analytically from the projector coordinates.

Augmentation follows the pipeline ``scale brightness -> roll-rotate ->
add Gaussian noise -> clip to 8 bit``; the noise defaults (mean 60,
std 180) deliberately exceed the 8-bit range, so clipping is part of the
model. A float path without clipping exists for statistics checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import kernels
from .pattern import GridPattern, rasterize_pattern, wrap01


class ConfigurationError(ValueError):
    """Invalid geometry or render configuration."""


ROLL_SET_DEGREES = (0.0, 2.0, -2.0, 4.0, -4.0, 6.0, -6.0, 8.0, -8.0)


# ---------------------------------------------------------------------------
# geometry


@dataclass(frozen=True)
class PinholeModel:
    """Pinhole device; ``rotation``/``translation`` map world to device coords."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigurationError("focal lengths must be positive")
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if np.abs(r.T @ r - np.eye(3)).max() >= 1e-9:
            raise ConfigurationError("rotation must be orthonormal")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @property
    def center(self) -> np.ndarray:
        """Device origin in world coordinates."""
        return -self.rotation.T @ self.translation

    def project(self, points):
        """World points (..., 3) -> (u, v, z_device)."""
        pts = np.asarray(points, dtype=np.float64)
        dev = pts @ self.rotation.T + self.translation
        z = dev[..., 2]
        safe = np.where(z == 0.0, 1.0, z)
        u = self.fx * dev[..., 0] / safe + self.cx
        v = self.fy * dev[..., 1] / safe + self.cy
        return u, v, z

    def pixel_rays(self):
        """Rays through all pixel centers: (origin (3,), dirs (H, W, 3)).

        Directions have unit z in the device frame, so the ray parameter
        of a hit equals its device-frame depth.
        """
        xs = np.arange(self.width, dtype=np.float64)
        ys = np.arange(self.height, dtype=np.float64)
        gx, gy = np.meshgrid(xs, ys)
        d = np.stack(
            [(gx - self.cx) / self.fx, (gy - self.cy) / self.fy, np.ones_like(gx)], axis=-1
        )
        return self.center, d @ self.rotation

    def ray_through(self, u, v):
        """World-frame ray directions for (possibly fractional) pixel coords."""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        d = np.stack(
            [(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1
        )
        return d @ self.rotation


def look_at(position, target, fx, fy, cx, cy, width, height) -> PinholeModel:
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    z = target - position
    norm = np.linalg.norm(z)
    if norm < 1e-12:
        raise ConfigurationError("look_at target coincides with position")
    z = z / norm
    x = np.cross([0.0, 1.0, 0.0], z)
    if np.linalg.norm(x) < 1e-9:
        x = np.array([1.0, 0.0, 0.0])
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    r = np.stack([x, y, z])
    # re-orthonormalize to keep the strict orthonormality invariant
    uu, _, vv = np.linalg.svd(r)
    r = uu @ vv
    return PinholeModel(fx, fy, cx, cy, width, height, rotation=r, translation=-r @ position)


# ---------------------------------------------------------------------------
# scenes


@dataclass(frozen=True)
class PlaneScene:
    """Points X with normal . X = offset."""

    normal: tuple[float, float, float]
    offset: float
    albedo: dict = field(default_factory=lambda: {"kind": "constant", "value": 1.0})


@dataclass(frozen=True)
class HeightfieldScene:
    """Depth surface z = h(x, y), bilinear over a rectangular extent."""

    heights: np.ndarray  # (ny, nx)
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    albedo: dict = field(default_factory=lambda: {"kind": "constant", "value": 1.0})

    def __post_init__(self):
        h = np.asarray(self.heights, dtype=np.float64)
        if not np.isfinite(h).all():
            raise ConfigurationError("heightfield contains non-finite heights")
        object.__setattr__(self, "heights", h)


@dataclass(frozen=True)
class MeshScene:
    triangles: np.ndarray  # (T, 3, 3)
    albedo: dict = field(default_factory=lambda: {"kind": "constant", "value": 1.0})

    def __post_init__(self):
        t = np.asarray(self.triangles, dtype=np.float64).reshape(-1, 3, 3)
        if not np.isfinite(t).all():
            raise ConfigurationError("mesh contains non-finite vertices")
        object.__setattr__(self, "triangles", t)


def intersect_scene(scene, origin, dirs):
    """Closest positive intersection: returns (t, hit) over flat dirs (P, 3)."""
    if isinstance(scene, PlaneScene):
        n = np.asarray(scene.normal, dtype=np.float64)
        denom = dirs @ n
        ok = np.abs(denom) > 1e-12
        t = np.where(ok, (scene.offset - origin @ n) / np.where(ok, denom, 1.0), -1.0)
        return t, ok & (t > 0)
    if isinstance(scene, HeightfieldScene):
        extent = (*scene.x_range, *scene.y_range)
        return kernels.raycast_heightfield(origin, dirs, scene.heights, extent)
    if isinstance(scene, MeshScene):
        return kernels.raycast_mesh(origin, dirs, scene.triangles)
    raise ConfigurationError(f"unknown scene type {type(scene).__name__}")


def albedo_at(spec: dict, x, y):
    kind = spec.get("kind", "constant")
    if kind == "constant":
        return np.full_like(np.asarray(x, dtype=np.float64), float(spec.get("value", 1.0)))
    if kind == "checker":
        size = float(spec.get("size", 0.05))
        lo = float(spec.get("low", 0.4))
        hi = float(spec.get("high", 1.0))
        parity = (np.floor(x / size) + np.floor(y / size)).astype(np.int64) % 2
        return np.where(parity == 0, hi, lo)
    raise ConfigurationError(f"unknown albedo kind {kind!r}")


# ---------------------------------------------------------------------------
# captures


@dataclass
class SceneCapture:
    """Rendered image plus analytically derived ground truth.

    Background (no surface hit) has NaN depth; pixels the projector does
    not light carry node ID -1, code -1, zero phase and NaN projector
    coordinates.
    """

    image: np.ndarray  # (H, W) uint8
    gt_depth: np.ndarray  # (H, W) float32, NaN = background
    gt_phase_u: np.ndarray  # (H, W) float32 in [0, 1)
    gt_phase_v: np.ndarray  # (H, W) float32 in [0, 1)
    gt_node_id: np.ndarray  # (H, W) int32, -1 = none
    gt_code: np.ndarray  # (H, W) int8, -1 = none
    gt_proj_u: np.ndarray  # (H, W) float32, NaN = unlit
    gt_proj_v: np.ndarray  # (H, W) float32, NaN = unlit

    @property
    def foreground(self):
        return np.isfinite(self.gt_depth)

    @property
    def lit(self):
        return np.isfinite(self.gt_proj_u)

    @property
    def is_empty(self) -> bool:
        return not bool(self.lit.any())

    def validate(self):
        maps = (
            self.gt_depth,
            self.gt_phase_u,
            self.gt_phase_v,
            self.gt_node_id,
            self.gt_code,
            self.gt_proj_u,
            self.gt_proj_v,
        )
        for m in maps:
            if m.shape != self.image.shape:
                raise ValueError("ground-truth map dimensions differ from image")
        for ph in (self.gt_phase_u, self.gt_phase_v):
            if ph.min() < 0.0 or ph.max() >= 1.0:
                raise ValueError("phase outside [0, 1)")
        fg = self.foreground
        if fg.any() and not (self.gt_depth[fg] > 0).all():
            raise ValueError("non-positive depth on foreground")


def render_capture(scene, camera: PinholeModel, projector: PinholeModel,
                   pattern: GridPattern, pattern_image=None) -> SceneCapture:
    if np.linalg.norm(camera.center - projector.center) < 1e-9:
        raise ConfigurationError("camera and projector share a center (no baseline)")
    if pattern_image is None:
        pattern_image = rasterize_pattern(pattern)
    if pattern_image.shape != (pattern.resolution[1], pattern.resolution[0]):
        raise ConfigurationError("pattern image does not match pattern resolution")

    h, w = camera.height, camera.width
    origin, dirs = camera.pixel_rays()
    t, hit = intersect_scene(scene, origin, dirs.reshape(-1, 3))
    t = t.reshape(h, w)
    hit = hit.reshape(h, w)
    points = origin[None, None, :] + t[..., None] * dirs

    u_p, v_p, z_p = projector.project(points)
    wp, hp = pattern.resolution
    with np.errstate(invalid="ignore"):
        lit = (
            hit
            & (z_p > 0)
            & (u_p >= -0.5)
            & (u_p < wp - 0.5)
            & (v_p >= -0.5)
            & (v_p < hp - 0.5)
        )
    u_p = np.where(lit, u_p, 0.0)  # keep downstream arithmetic finite off-mask
    v_p = np.where(lit, v_p, 0.0)

    sample = ndimage.map_coordinates(
        pattern_image.astype(np.float64), [v_p.ravel(), u_p.ravel()], order=1, cval=0.0
    ).reshape(h, w)
    sample = np.where(lit, sample, 0.0)
    alb = albedo_at(_scene_albedo(scene), points[..., 0], points[..., 1])
    image = np.clip(np.round(sample * alb), 0, 255).astype(np.uint8)

    phase_u = np.where(lit, wrap01(u_p / pattern.period_u), 0.0).astype(np.float32)
    phase_v = np.where(lit, wrap01(v_p / pattern.period_v), 0.0).astype(np.float32)
    phase_u[phase_u >= 1.0] = 0.0  # float32 rounding guard
    phase_v[phase_v >= 1.0] = 0.0

    jj = np.round(u_p / pattern.period_u).astype(np.int64)
    ii = np.round(v_p / pattern.period_v).astype(np.int64)
    on_lattice = lit & (jj >= 0) & (jj < pattern.cols) & (ii >= 0) & (ii < pattern.rows)
    node_id = np.where(on_lattice, ii * pattern.cols + jj, -1).astype(np.int32)
    code = np.full((h, w), -1, dtype=np.int8)
    code[on_lattice] = pattern.codes[ii[on_lattice], jj[on_lattice]]

    depth = np.where(hit, t, np.nan).astype(np.float32)
    proj_u = np.where(lit, u_p, np.nan).astype(np.float32)
    proj_v = np.where(lit, v_p, np.nan).astype(np.float32)
    return SceneCapture(image, depth, phase_u, phase_v, node_id, code, proj_u, proj_v)


def _scene_albedo(scene) -> dict:
    return scene.albedo


def project_pattern_nodes(scene, camera, projector, pattern, margin_px=6.0):
    """Camera-pixel positions of all lattice nodes and their visibility.

    A node is visible when its projector ray hits the scene, the hit
    projects inside the camera frame with ``margin_px`` to spare, and its
    glyph is not clipped by the projector frame.
    """
    ids = np.arange(pattern.num_nodes)
    nu, nv = pattern.node_uv(ids)
    dirs = projector.ray_through(nu, nv)
    t, hit = intersect_scene(scene, projector.center, dirs.reshape(-1, 3))
    points = projector.center[None, :] + t[:, None] * dirs
    x, y, z = camera.project(points)
    wp, hp = pattern.resolution
    glyph_margin = 0.25 * min(pattern.period_u, pattern.period_v)
    visible = (
        hit
        & (z > 0)
        & (x >= margin_px)
        & (x <= camera.width - 1 - margin_px)
        & (y >= margin_px)
        & (y <= camera.height - 1 - margin_px)
        & (nu >= glyph_margin - 0.5)
        & (nu <= wp - 0.5 - glyph_margin)
        & (nv >= glyph_margin - 0.5)
        & (nv <= hp - 0.5 - glyph_margin)
    )
    return np.stack([x, y], axis=1), visible, points


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentConfig:
    noise_mean: float = 60.0
    noise_std: float = 180.0
    roll_degrees: float = 0.0
    brightness_scale: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.noise_std < 0:
            raise ConfigurationError("noise_std must be >= 0")
        if self.brightness_scale <= 0:
            raise ConfigurationError("brightness_scale must be > 0")

    def validate_roll_set(self):
        if not any(abs(self.roll_degrees - r) < 1e-12 for r in ROLL_SET_DEGREES):
            raise ConfigurationError(
                f"roll {self.roll_degrees} outside the sanctioned set {sorted(set(abs(r) for r in ROLL_SET_DEGREES))}"
            )

    def to_json(self) -> dict:
        return {
            "noise_mean": self.noise_mean,
            "noise_std": self.noise_std,
            "roll_degrees": self.roll_degrees,
            "brightness_scale": self.brightness_scale,
            "rng_seed": self.rng_seed,
        }

    @staticmethod
    def from_json(obj: dict) -> "AugmentConfig":
        return AugmentConfig(**obj)


def augment(image, cfg: AugmentConfig, return_float=False):
    """Brightness scale, roll rotation about the image center (bilinear,
    zero fill), additive Gaussian noise, then 8-bit clipping.

    With ``return_float=True`` the pre-clipping float image is returned,
    which keeps the raw noise statistics observable.
    """
    img = np.asarray(image, dtype=np.float64)
    if cfg.brightness_scale != 1.0:
        img = img * cfg.brightness_scale
    if cfg.roll_degrees != 0.0:
        img = ndimage.rotate(img, cfg.roll_degrees, reshape=False, order=1, cval=0.0)
    if cfg.noise_std > 0.0 or cfg.noise_mean != 0.0:
        rng = np.random.default_rng(cfg.rng_seed)
        img = img + rng.normal(cfg.noise_mean, cfg.noise_std, size=img.shape)
    if return_float:
        return img
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# randomized dataset generation


def default_rig(pattern: GridPattern, width=640, height=480, baseline=0.25,
                scene_depth=1.0, fx=600.0, projector_fov_scale=0.9):
    """Camera at the origin looking +z; projector offset along +x, toed in."""
    camera = PinholeModel(fx, fx, (width - 1) / 2.0, (height - 1) / 2.0, width, height)
    wp, hp = pattern.resolution
    fp = projector_fov_scale * wp
    projector = look_at(
        [baseline, 0.0, 0.0],
        [0.0, 0.0, scene_depth],
        fp,
        fp,
        (wp - 1) / 2.0,
        (hp - 1) / 2.0,
        wp,
        hp,
    )
    return camera, projector


def make_heightfield(seed, base_depth=1.0, amplitude=0.01, grid=9, upsample=8,
                     x_half=0.45, y_half=0.35, albedo=None) -> HeightfieldScene:
    """Random smooth bump field around a base depth plane."""
    rng = np.random.default_rng(seed)
    coarse = rng.normal(0.0, 1.0, size=(grid, grid))
    smooth = ndimage.zoom(coarse, upsample, order=3)
    smooth = smooth / max(np.abs(smooth).max(), 1e-9) * amplitude
    return HeightfieldScene(
        heights=base_depth + smooth,
        x_range=(-x_half, x_half),
        y_range=(-y_half, y_half),
        albedo=albedo or {"kind": "constant", "value": 1.0},
    )


def make_tilted_plane(seed, base_depth=1.0, max_tilt_deg=12.0, albedo=None) -> PlaneScene:
    rng = np.random.default_rng(seed)
    ax = np.deg2rad(rng.uniform(-max_tilt_deg, max_tilt_deg))
    ay = np.deg2rad(rng.uniform(-max_tilt_deg, max_tilt_deg))
    normal = np.array([np.sin(ax), np.sin(ay), -np.cos(ax) * np.cos(ay)])
    normal = normal / np.linalg.norm(normal)
    # plane passes through (0, 0, base_depth)
    offset = float(normal @ np.array([0.0, 0.0, base_depth]))
    return PlaneScene(normal=tuple(normal), offset=offset, albedo=albedo or {"kind": "constant", "value": 1.0})


def generate_dataset(n_scenes, pattern: GridPattern, seed, width=320, height=240,
                     baseline=0.25, base_depth=1.0, brightness_range=(0.7, 1.3),
                     noise_mean=60.0, noise_std=180.0):
    """Randomized captures with paper-style augmentation draws.

    Returns ``(captures, manifest)``; the manifest records every sampled
    parameter and is byte-stable for a fixed seed.
    """
    if n_scenes < 1:
        raise ConfigurationError("n_scenes must be >= 1")
    camera, projector = default_rig(
        pattern, width=width, height=height, baseline=baseline, scene_depth=base_depth
    )
    pattern_image = rasterize_pattern(pattern)
    root = np.random.SeedSequence(seed)
    children = root.spawn(n_scenes)
    captures = []
    entries = []
    for idx, child in enumerate(children):
        rng = np.random.default_rng(child)
        scene_seed = int(rng.integers(0, 2**31 - 1))
        kind = "plane" if rng.random() < 0.5 else "heightfield"
        if kind == "plane":
            scene = make_tilted_plane(scene_seed, base_depth=base_depth)
            scene_info = {"kind": kind, "seed": scene_seed, "base_depth": base_depth}
        else:
            amplitude = float(rng.uniform(0.004, 0.02))
            scene = make_heightfield(scene_seed, base_depth=base_depth, amplitude=amplitude)
            scene_info = {
                "kind": kind,
                "seed": scene_seed,
                "base_depth": base_depth,
                "amplitude": amplitude,
            }
        cfg = AugmentConfig(
            noise_mean=noise_mean,
            noise_std=noise_std,
            roll_degrees=float(ROLL_SET_DEGREES[rng.integers(0, len(ROLL_SET_DEGREES))]),
            brightness_scale=float(rng.uniform(*brightness_range)),
            rng_seed=int(rng.integers(0, 2**31 - 1)),
        )
        cfg.validate_roll_set()
        capture = render_capture(scene, camera, projector, pattern, pattern_image)
        capture.image = augment(capture.image, cfg)
        capture.validate()
        captures.append(capture)
        entries.append({"index": idx, "scene": scene_info, "augment": cfg.to_json()})
    manifest = {
        "seed": seed,
        "n_scenes": n_scenes,
        "image_size": [width, height],
        "baseline": baseline,
        "captures": entries,
    }
    return captures, manifest


def pinhole_to_json(model: PinholeModel) -> dict:
    return {
        "fx": model.fx,
        "fy": model.fy,
        "cx": model.cx,
        "cy": model.cy,
        "width": model.width,
        "height": model.height,
        "rotation": model.rotation.tolist(),
        "translation": model.translation.tolist(),
    }


def pinhole_from_json(obj: dict) -> PinholeModel:
    return PinholeModel(
        fx=float(obj["fx"]),
        fy=float(obj["fy"]),
        cx=float(obj["cx"]),
        cy=float(obj["cy"]),
        width=int(obj["width"]),
        height=int(obj["height"]),
        rotation=np.asarray(obj["rotation"], dtype=np.float64),
        translation=np.asarray(obj["translation"], dtype=np.float64),
    )


__all__ = [
    "AugmentConfig",
    "ConfigurationError",
    "HeightfieldScene",
    "MeshScene",
    "PinholeModel",
    "PlaneScene",
    "ROLL_SET_DEGREES",
    "SceneCapture",
    "augment",
    "default_rig",
    "generate_dataset",
    "intersect_scene",
    "look_at",
    "make_heightfield",
    "make_tilted_plane",
    "pinhole_from_json",
    "pinhole_to_json",
    "project_pattern_nodes",
    "render_capture",
]
