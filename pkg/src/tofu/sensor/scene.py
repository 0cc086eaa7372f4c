"""Procedural ray-cast scenes rendered from the ToF and RGB viewpoints.

The world frame is the ToF camera frame (x right, y down, z forward). The RGB camera sits at
``X_rgb = R @ X_tof + t`` according to the calibration's ToF-to-RGB extrinsics.

Scene documents are JSON. A document either lists explicit ``primitives`` or gives generator knobs
(see :data:`DEFAULT_GENERATOR` for every key and its default)::

    {"width": 64, "height": 64,
     "calibration": {"tof": {...}, "rgb": {...}, "extrinsics_tof_to_rgb": {...}},
     "depth_range": [1.0, 15.0],
     "primitives": [
        {"kind": "plane", "point": [0, 0, 3], "normal": [0, 0, -1], "albedo": 0.8,
         "color": [1, 1, 1], "texture": "checker", "texture_scale": 0.5},
        {"kind": "sphere", "center": [0, 0, 5], "radius": 1.0, ...},
        {"kind": "box", "lo": [-1, 0, 4], "hi": [0, 1, 5], ...}]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from ..core import Calibration, Extrinsics, Intrinsics, Raster, load_calibration

TEXTURES = ("flat", "checker", "stripes", "cells")
_EPS = 1e-9


@dataclass(frozen=True)
class Material:
    albedo: float = 0.8
    color: tuple[float, float, float] = (1.0, 1.0, 1.0)
    texture: str = "flat"
    texture_scale: float = 0.5

    def __post_init__(self):
        if not 0 < self.albedo <= 1:
            raise ValueError("albedo must lie in (0, 1]")
        if self.texture not in TEXTURES:
            raise ValueError(f"unknown texture {self.texture!r}")
        if not self.texture_scale > 0:
            raise ValueError("texture_scale must be positive")


@dataclass(frozen=True)
class Plane:
    point: tuple[float, float, float]
    normal: tuple[float, float, float]
    material: Material = field(default_factory=Material)

    def intersect(self, o, d):
        n = np.asarray(self.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        denom = n @ d
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (n @ (np.asarray(self.point, dtype=np.float64) - o)) / denom
        t = np.where(np.abs(denom) > 1e-12, t, np.inf)
        t = np.where(t > _EPS, t, np.inf)
        normal = np.broadcast_to(n[:, None], d.shape)
        return t, normal


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float
    material: Material = field(default_factory=Material)

    def intersect(self, o, d):
        c = np.asarray(self.center, dtype=np.float64)
        oc = (o - c)[:, None] if o.ndim == 1 else o - c[:, None]
        a = np.sum(d * d, axis=0)
        b = 2.0 * np.sum(oc * d, axis=0)
        cc = np.sum(oc * oc, axis=0) - self.radius**2
        disc = b * b - 4 * a * cc
        root = np.sqrt(np.maximum(disc, 0.0))
        t1 = (-b - root) / (2 * a)
        t2 = (-b + root) / (2 * a)
        t = np.where(t1 > _EPS, t1, np.where(t2 > _EPS, t2, np.inf))
        t = np.where(disc >= 0, t, np.inf)
        hit = oc + d * np.where(np.isfinite(t), t, 0.0)
        normal = hit / self.radius
        return t, normal


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    material: Material = field(default_factory=Material)

    def __post_init__(self):
        if not np.all(np.asarray(self.hi) > np.asarray(self.lo)):
            raise ValueError("box needs hi > lo on every axis")

    def intersect(self, o, d):
        lo = np.asarray(self.lo, dtype=np.float64)[:, None]
        hi = np.asarray(self.hi, dtype=np.float64)[:, None]
        oo = o[:, None] if o.ndim == 1 else o
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            ta = (lo - oo) * inv
            tb = (hi - oo) * inv
        ta = np.nan_to_num(ta, nan=-np.inf)
        tb = np.nan_to_num(tb, nan=np.inf)
        tmin = np.minimum(ta, tb)
        tmax = np.maximum(ta, tb)
        tnear = tmin.max(axis=0)
        tfar = tmax.min(axis=0)
        axis = tmin.argmax(axis=0)
        hit = (tnear <= tfar) & (tfar > _EPS)
        t = np.where(hit, np.where(tnear > _EPS, tnear, tfar), np.inf)
        normal = np.zeros_like(d)
        cols = np.arange(d.shape[1])
        normal[axis, cols] = -np.sign(d[axis, cols])
        return t, normal


Primitive = Plane | Sphere | Box


@dataclass(frozen=True)
class SceneSpec:
    primitives: tuple
    calibration: Calibration
    width: int = 64
    height: int = 64
    depth_range: tuple[float, float] = (1.0, 15.0)
    flash_power: float = 20.0
    ambient_light: float = 0.05

    def __post_init__(self):
        if self.depth_range[0] <= 0 or self.depth_range[1] <= self.depth_range[0]:
            raise ValueError("depth_range needs 0 < d_min < d_max")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")


@dataclass(frozen=True)
class RenderedScene:
    depth_tof: Raster
    albedo: Raster
    depth_rgb: Raster
    rgb: Raster

    def __iter__(self):
        return iter((self.depth_tof, self.albedo, self.depth_rgb, self.rgb))


def pixel_rays(K: Intrinsics, width: int, height: int) -> np.ndarray:
    """Camera-frame ray directions with unit z, shape (3, H*W), row-major pixel order."""
    u, v = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    pix = np.stack([u.ravel(), v.ravel(), np.ones(u.size)])
    return K.K_inv @ pix


def _texture(kind: str, scale: float, pts: np.ndarray) -> np.ndarray:
    if kind == "flat":
        return np.ones(pts.shape[1])
    cell = np.floor(pts / scale)
    if kind == "checker":
        parity = np.mod(cell.sum(axis=0), 2.0)
        return 0.75 + 0.25 * parity
    if kind == "stripes":
        return 0.875 + 0.125 * np.sin(2 * np.pi * (pts[0] + pts[2]) / scale)
    # cells: deterministic integer hash of the lattice cell
    ci = cell.astype(np.int64)
    h = (ci[0] * 73856093) ^ (ci[1] * 19349663) ^ (ci[2] * 83492791)
    return 0.75 + 0.25 * (np.mod(h, 1009) / 1008.0)


def _cast(spec: SceneSpec, origin: np.ndarray, dirs: np.ndarray):
    n = dirs.shape[1]
    best_t = np.full(n, np.inf)
    best_i = np.full(n, -1)
    best_n = np.zeros((3, n))
    for i, prim in enumerate(spec.primitives):
        t, normal = prim.intersect(origin, dirs)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_i = np.where(closer, i, best_i)
        best_n = np.where(closer[None], normal, best_n)
    return best_t, best_i, best_n


def _view(spec: SceneSpec, K: Intrinsics, to_world: Extrinsics):
    cam_dirs = pixel_rays(K, spec.width, spec.height)
    origin = to_world.t.copy()
    dirs = to_world.R @ cam_dirs
    t, idx, normal = _cast(spec, origin, dirs)
    d_min, d_max = spec.depth_range
    # rays have unit camera-frame z, so the ray parameter is the z-depth
    valid = np.isfinite(t) & (t >= d_min) & (t <= d_max)
    pts = origin[:, None] + dirs * np.where(np.isfinite(t), t, 0.0)
    to_cam = origin[:, None] - pts
    dist = np.linalg.norm(to_cam, axis=0)
    normal = normal / np.maximum(np.linalg.norm(normal, axis=0), 1e-12)
    # orient normals toward the viewer
    facing = np.sum(normal * to_cam, axis=0)
    normal = np.where(facing < 0, -normal, normal)
    cos = np.clip(np.sum(normal * to_cam, axis=0) / np.maximum(dist, 1e-12), 0.0, 1.0)
    return t, idx, valid, pts, cos, dist


def render_scene(spec: SceneSpec, emitter=None) -> RenderedScene:
    """Ray-cast z-depth, effective IR albedo and shaded RGB for both cameras.

    Background and out-of-range pixels carry depth 0 (invalid). IR albedo folds in the Lambertian
    cosine for a source co-located with the ToF camera; RGB uses a flash at the RGB camera with
    inverse-square falloff and an exponential tone curve.
    """
    if not spec.primitives:
        raise ValueError("empty scene")
    cal = spec.calibration
    H, W = spec.height, spec.width

    t, idx, valid, pts, cos, _ = _view(spec, cal.tof, Extrinsics.identity())
    depth_tof = np.where(valid, t, 0.0)
    rho = np.zeros(H * W)
    for i, prim in enumerate(spec.primitives):
        sel = valid & (idx == i)
        rho[sel] = prim.material.albedo * np.maximum(cos[sel], 1e-3)

    rgb_to_world = cal.tof_to_rgb.inverse()
    t2, idx2, valid2, pts2, cos2, dist2 = _view(spec, cal.rgb, rgb_to_world)
    depth_rgb = np.where(valid2, t2, 0.0)
    rgb = np.zeros((3, H * W))
    tone = spec.ambient_light + (1 - spec.ambient_light) * (
        1 - np.exp(-spec.flash_power * cos2 / np.maximum(dist2, 1e-6) ** 2)
    )
    for i, prim in enumerate(spec.primitives):
        sel = valid2 & (idx2 == i)
        if not sel.any():
            continue
        m = prim.material
        tex = _texture(m.texture, m.texture_scale, pts2[:, sel])
        rgb[:, sel] = np.asarray(m.color, dtype=np.float64)[:, None] * tex * tone[sel]
    rgb = np.clip(rgb, 0.0, 1.0)

    return RenderedScene(
        Raster(depth_tof.reshape(1, H, W), "depth_m"),
        Raster(rho.reshape(1, H, W), "generic"),
        Raster(depth_rgb.reshape(1, H, W), "depth_m"),
        Raster(rgb.reshape(3, H, W), "rgb"),
    )


def default_calibration(width: int = 64, height: int = 64) -> Calibration:
    """ToF camera with ~60 degree FOV; a wider RGB camera 6 cm to its left, slightly toed in."""
    s = width / 64.0
    tof = Intrinsics(56.0 * s, 56.0 * s, (width - 1) / 2, (height - 1) / 2)
    rgb = Intrinsics(48.0 * s, 48.0 * s, (width - 1) / 2, (height - 1) / 2)
    yaw = np.deg2rad(0.5)
    R = np.array([[np.cos(yaw), 0, np.sin(yaw)], [0, 1, 0], [-np.sin(yaw), 0, np.cos(yaw)]])
    return Calibration(tof, rgb, Extrinsics(R, [0.06, 0.0, 0.0]))


DEFAULT_GENERATOR = {
    "width": 64,
    "height": 64,
    "depth_range": [1.0, 15.0],
    "wall_depth": [9.0, 13.0],
    "camera_height": [1.0, 1.5],
    "objects": [2, 5],
    "object_depth": [1.5, 12.0],
    "albedo_range": [0.15, 1.0],
    "rgb_albedo_range": [0.8, 1.0],
    "flash_power": 20.0,
    "ambient_light": 0.05,
    "emitter": {"mod_freq_hz": 20e6, "source_amplitude": 2000.0},
}


@dataclass(frozen=True)
class SceneGenerator:
    """Random room-like scenes: a back wall, a floor and a handful of boxes and spheres."""

    params: dict
    calibration: Calibration

    @classmethod
    def from_config(cls, doc: dict | None = None) -> "SceneGenerator":
        params = {**DEFAULT_GENERATOR, **(doc or {})}
        if "calibration" in params:
            cal = load_calibration(json.dumps(params["calibration"]))
        else:
            cal = default_calibration(params["width"], params["height"])
        return cls(params, cal)

    def _material(self, rng: np.random.Generator) -> Material:
        p = self.params
        tint = rng.uniform(*p["rgb_albedo_range"], size=3)
        return Material(
            albedo=float(rng.uniform(*p["albedo_range"])),
            color=tuple(float(c) for c in tint),
            texture=str(rng.choice(TEXTURES)),
            texture_scale=float(rng.uniform(0.2, 1.0)),
        )

    def sample(self, rng: np.random.Generator) -> SceneSpec:
        p = self.params
        d_min, d_max = p["depth_range"]
        wall_z = float(rng.uniform(*p["wall_depth"]))
        cam_h = float(rng.uniform(*p["camera_height"]))
        tilt = np.clip(rng.normal(0.0, 0.06, size=2), -0.12, 0.12)
        prims = [
            Plane((0.0, 0.0, wall_z), (tilt[0], tilt[1], -1.0), self._material(rng)),
            Plane((0.0, cam_h, 0.0), (0.0, -1.0, 0.0), self._material(rng)),
        ]
        fx = self.calibration.tof.fx
        half_w = 0.5 * p["width"] / fx
        lo_z, hi_z = p["object_depth"]
        n_obj = int(rng.integers(p["objects"][0], p["objects"][1] + 1))
        for _ in range(n_obj):
            z = float(rng.uniform(lo_z, min(hi_z, wall_z - 1.0)))
            x = float(rng.uniform(-half_w, half_w) * z * 0.8)
            size = float(rng.uniform(0.3, 0.25 + 0.1 * z))
            mat = self._material(rng)
            if rng.random() < 0.5:
                prims.append(Sphere((x, cam_h - size, z), size, mat))
            else:
                top = cam_h - float(rng.uniform(0.5, 2.0)) * size * 2
                prims.append(Box((x - size, top, z - size), (x + size, cam_h, z + size), mat))
        return SceneSpec(
            tuple(prims),
            self.calibration,
            p["width"],
            p["height"],
            (float(d_min), float(d_max)),
            float(p["flash_power"]),
            float(p["ambient_light"]),
        )


def _material_from(doc: dict) -> Material:
    return Material(
        albedo=float(doc.get("albedo", 0.8)),
        color=tuple(float(c) for c in doc.get("color", (1.0, 1.0, 1.0))),
        texture=doc.get("texture", "flat"),
        texture_scale=float(doc.get("texture_scale", 0.5)),
    )


def primitive_from_dict(doc: dict):
    kind = doc.get("kind")
    mat = _material_from(doc)
    if kind == "plane":
        return Plane(tuple(doc["point"]), tuple(doc["normal"]), mat)
    if kind == "sphere":
        return Sphere(tuple(doc["center"]), float(doc["radius"]), mat)
    if kind == "box":
        return Box(tuple(doc["lo"]), tuple(doc["hi"]), mat)
    raise ValueError(f"unknown primitive kind {kind!r}")


def scene_from_dict(doc: dict) -> SceneSpec:
    """Explicit scene document (must contain ``primitives``)."""
    if not doc.get("primitives"):
        raise ValueError("empty scene")
    width = int(doc.get("width", 64))
    height = int(doc.get("height", 64))
    if "calibration" in doc:
        cal = load_calibration(json.dumps(doc["calibration"]))
    else:
        cal = default_calibration(width, height)
    return SceneSpec(
        tuple(primitive_from_dict(p) for p in doc["primitives"]),
        cal,
        width,
        height,
        tuple(float(v) for v in doc.get("depth_range", (1.0, 15.0))),
        float(doc.get("flash_power", 20.0)),
        float(doc.get("ambient_light", 0.05)),
    )


def with_calibration(spec: SceneSpec, calibration: Calibration) -> SceneSpec:
    return replace(spec, calibration=calibration)
