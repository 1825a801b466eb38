"""Capsule-based software renderer for posed skeletons.

Bones become screen-space capsules (the torso an ellipse) drawn far-to-near
by midpoint depth with a per-pixel depth test. Coverage is binary: a pixel
is inside a shape when its center is.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .skeleton import Camera, JointPositions, Skeleton, SkeletonError, forward_kinematics

DEFAULT_COLOR = (182, 170, 150)
STRIPE_COLOR = (24, 22, 20)


class RenderError(RuntimeError):
    pass


class OutOfFrameError(RenderError):
    pass


class RenderConfigError(RenderError, ValueError):
    pass


def _interval(v) -> tuple[float, float]:
    lo, hi = (float(v), float(v)) if np.isscalar(v) else (float(v[0]), float(v[1]))
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
        raise RenderConfigError(f"invalid interval {v!r}")
    return lo, hi


@dataclass
class RenderConfig:
    azimuth: tuple[float, float] = (60.0, 120.0)  # degrees, 90 = camera on the animal's left
    elevation: tuple[float, float] = (-5.0, 20.0)  # degrees
    distance: tuple[float, float] = (4.5, 6.0)  # meters from target
    brightness: tuple[float, float] = (0.7, 1.3)
    target: tuple[float, float, float] = (0.5, 0.0, -0.35)
    focal_length: float = 300.0
    image_size: tuple[int, int] = (256, 256)
    bone_radius: dict[str, float] = field(default_factory=dict)
    default_radius: float = 0.05
    torso_radius: float = 0.22
    root_as_ellipse: bool = True
    colors: dict[str, tuple[int, int, int]] = field(default_factory=dict)
    default_color: tuple[int, int, int] = DEFAULT_COLOR
    stripes: bool = False
    stripe_period: float = 10.0  # pixels per light+dark pair
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("azimuth", "elevation", "distance", "brightness"):
            setattr(self, name, _interval(getattr(self, name)))
        lo, hi = self.brightness
        if not (0 < lo and hi <= 4):
            raise RenderConfigError("brightness interval must lie in (0, 4]")
        if self.distance[0] <= 0:
            raise RenderConfigError("camera distance must be positive")
        self.image_size = (int(self.image_size[0]), int(self.image_size[1]))

    def radius(self, bone: str) -> float:
        return self.bone_radius.get(bone, self.default_radius)

    def color(self, bone: str) -> tuple[int, int, int]:
        return tuple(self.colors.get(bone, self.default_color))


@dataclass
class RasterImage:
    pixels: np.ndarray  # (height, width, 4) uint8

    def __post_init__(self):
        if self.pixels.dtype != np.uint8 or self.pixels.ndim != 3 or self.pixels.shape[2] != 4:
            raise RenderConfigError("RasterImage needs an (h, w, 4) uint8 array")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def save(self, path: str | Path) -> None:
        Image.fromarray(self.pixels, "RGBA").save(path, format="PNG")

    @classmethod
    def load(cls, path: str | Path) -> RasterImage:
        with Image.open(path) as im:
            return cls(np.array(im.convert("RGBA")))


@dataclass
class AnimalMask:
    mask: np.ndarray  # (height, width) bool
    depth: np.ndarray  # (height, width) float, inf outside mask

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    def save(self, path: str | Path) -> None:
        Image.fromarray(self.mask.astype(np.uint8) * 255, "L").save(path, format="PNG")

    @classmethod
    def load(cls, path: str | Path) -> AnimalMask:
        """Depth is not stored in PNG; loaded masks carry zero depth."""
        with Image.open(path) as im:
            m = np.array(im.convert("L")) > 127
        return cls(m, np.where(m, 0.0, np.inf))


def randomize_camera_light(config: RenderConfig, draw_index: int) -> tuple[Camera, float]:
    """Uniform camera pose and brightness from the (rng_seed, draw_index) substream."""
    rng = np.random.default_rng([config.rng_seed, draw_index])
    az = np.radians(rng.uniform(*config.azimuth))
    el = np.radians(rng.uniform(*config.elevation))
    dist = rng.uniform(*config.distance)
    brightness = rng.uniform(*config.brightness)
    target = np.asarray(config.target, float)
    direction = np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
    pos = target + dist * direction
    cam = Camera(tuple(pos), tuple(target), config.focal_length, config.image_size)
    return cam, float(brightness)


@dataclass
class Shape:
    kind: str  # "capsule" | "ellipse"
    p0: np.ndarray  # screen endpoints
    p1: np.ndarray
    d0: float  # endpoint depths
    d1: float
    radius: float  # pixels (semi-minor axis for ellipses)
    color: tuple[int, int, int]
    bone: int

    @property
    def mid_depth(self) -> float:
        return 0.5 * (self.d0 + self.d1)


def _shape_coverage(s: Shape, xs: np.ndarray, ys: np.ndarray, stripes: bool, period: float):
    """Coverage, depth and stripe parity for pixel centers (xs, ys)."""
    seg = s.p1 - s.p0
    seg_len2 = float(seg @ seg)
    px, py = xs - s.p0[0], ys - s.p0[1]
    if seg_len2 > 0:
        t_raw = (px * seg[0] + py * seg[1]) / seg_len2
    else:
        t_raw = np.zeros_like(px)
    if s.kind == "capsule":
        t = np.clip(t_raw, 0.0, 1.0)
        dx, dy = px - t * seg[0], py - t * seg[1]
        inside = dx * dx + dy * dy <= s.radius * s.radius
    else:
        seg_len = np.sqrt(seg_len2)
        a = 0.5 * seg_len + s.radius
        b = s.radius
        ux, uy = (seg / seg_len) if seg_len > 0 else (1.0, 0.0)
        cx, cy = px - 0.5 * seg[0], py - 0.5 * seg[1]
        along = cx * ux + cy * uy
        across = -cx * uy + cy * ux
        inside = (along / a) ** 2 + (across / b) ** 2 <= 1.0
        t = np.clip(t_raw, 0.0, 1.0)
    depth = s.d0 + t * (s.d1 - s.d0)
    dark = None
    if stripes:
        arc = t_raw * np.sqrt(seg_len2)
        dark = np.floor(arc / (0.5 * period)).astype(np.int64) % 2 == 1
    return inside, depth, dark


def build_shapes(sk: Skeleton, joints: JointPositions, camera: Camera, config: RenderConfig) -> list[Shape]:
    uv_h, d_h = camera.project(joints.heads)
    uv_t, d_t = camera.project(joints.tails)
    if np.any(d_h <= 0) or np.any(d_t <= 0):
        bad = [sk.bones[i].name for i in range(len(sk.bones)) if d_h[i] <= 0 or d_t[i] <= 0]
        raise SkeletonError("bones behind camera: " + ", ".join(bad), field="camera")
    shapes = []
    for i, b in enumerate(sk.bones):
        mid = 0.5 * (d_h[i] + d_t[i])
        ellipse = i == 0 and config.root_as_ellipse
        r_world = config.torso_radius if ellipse else config.radius(b.name)
        shapes.append(
            Shape(
                "ellipse" if ellipse else "capsule",
                uv_h[i],
                uv_t[i],
                float(d_h[i]),
                float(d_t[i]),
                camera.focal_length * r_world / mid,
                config.color(b.name),
                i,
            )
        )
    return shapes


def rasterize(shapes: list[Shape], width: int, height: int, config: RenderConfig, brightness: float = 1.0):
    rgb = np.zeros((height, width, 3), dtype=np.uint8)
    depth = np.full((height, width), np.inf)
    owner = np.full((height, width), -1, dtype=np.int64)
    # stable sort: equal midpoint depths keep bone order
    order = sorted(range(len(shapes)), key=lambda k: -shapes[k].mid_depth)
    for k in order:
        s = shapes[k]
        reach = s.radius + (0.5 * np.linalg.norm(s.p1 - s.p0) if s.kind == "ellipse" else 0.0)
        lo = np.floor(np.minimum(s.p0, s.p1) - reach - 1).astype(int)
        hi = np.ceil(np.maximum(s.p0, s.p1) + reach + 1).astype(int)
        x0, y0 = max(lo[0], 0), max(lo[1], 0)
        x1, y1 = min(hi[0], width), min(hi[1], height)
        if x0 >= x1 or y0 >= y1:
            continue
        ys, xs = np.mgrid[y0:y1, x0:x1].astype(np.float64)
        inside, d, dark = _shape_coverage(s, xs + 0.5, ys + 0.5, config.stripes, config.stripe_period)
        win = inside & (d <= depth[y0:y1, x0:x1])
        base = np.array(s.color, dtype=np.float64)
        lit = np.clip(np.floor(base * brightness + 0.5), 0, 255).astype(np.uint8)
        patch = rgb[y0:y1, x0:x1]
        patch[win] = lit
        if dark is not None:
            dark_lit = np.clip(np.floor(np.array(STRIPE_COLOR, float) * brightness + 0.5), 0, 255).astype(np.uint8)
            patch[win & dark] = dark_lit
        depth[y0:y1, x0:x1][win] = d[win]
        owner[y0:y1, x0:x1][win] = s.bone
    return rgb, depth, owner


def render_pose(
    sk: Skeleton,
    pose,
    camera: Camera,
    config: RenderConfig,
    brightness: float = 1.0,
    joints: JointPositions | None = None,
) -> tuple[RasterImage, AnimalMask]:
    joints = joints if joints is not None else forward_kinematics(sk, pose)
    width, height = camera.image_size
    shapes = build_shapes(sk, joints, camera, config)
    rgb, depth, _ = rasterize(shapes, width, height, config, brightness)
    mask = np.isfinite(depth)
    if not mask.any():
        raise OutOfFrameError("animal lies entirely outside the frame")
    pixels = np.zeros((height, width, 4), dtype=np.uint8)
    pixels[..., :3] = np.where(mask[..., None], rgb, 0)
    pixels[..., 3] = np.where(mask, 255, 0)
    return RasterImage(pixels), AnimalMask(mask, depth)
