"""Cross-camera alignment: intrinsic alignment, depth-driven backward warps and forward splatting.

Pixel coordinates put pixel centres at integers. A sample at (x, y) is in view when it lies
inside the source raster padded by half a pixel, i.e. -0.5 <= x <= W - 0.5; samples in the pad
are clamped to the border pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Extrinsics, Intrinsics, Raster, depth_valid


@dataclass(frozen=True)
class Taps:
    """Flat source indices and weights of the four bilinear neighbours of each sample."""

    index: np.ndarray  # (4, n) int64
    weight: np.ndarray  # (4, n) float64
    inside: np.ndarray  # (n,) bool


def bilinear_taps(xs: np.ndarray, ys: np.ndarray, height: int, width: int) -> Taps:
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    with np.errstate(invalid="ignore"):
        inside = (xs >= -0.5) & (xs <= width - 0.5) & (ys >= -0.5) & (ys <= height - 0.5)
    inside &= np.isfinite(xs) & np.isfinite(ys)
    xc = np.clip(np.where(inside, xs, 0.0), 0, width - 1)
    yc = np.clip(np.where(inside, ys, 0.0), 0, height - 1)
    x0 = np.floor(xc).astype(np.int64)
    y0 = np.floor(yc).astype(np.int64)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    wx = xc - x0
    wy = yc - y0
    index = np.stack([y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1])
    weight = np.stack([(1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy])
    weight = weight * inside
    return Taps(index, weight, inside)


def sample_bilinear(
    image: np.ndarray,
    xs: np.ndarray,
    ys: np.ndarray,
    src_valid: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear lookup of a (C, H, W) array at float coordinates.

    Returns ``(values, valid)`` shaped (C, *xs.shape) and xs.shape. A sample is valid when it is
    in view and every neighbour with non-zero weight is valid in ``src_valid``. Invalid samples
    are 0. Zero-weight neighbours never contribute, so integer coordinates reproduce the source
    bit for bit.
    """
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[None]
    c, h, w = image.shape
    out_shape = np.shape(xs)
    taps = bilinear_taps(xs, ys, h, w)
    flat = image.reshape(c, -1).astype(np.float64)
    used = taps.weight > 0
    valid = taps.inside.copy()
    if src_valid is not None:
        sv = np.asarray(src_valid, dtype=bool).ravel()
        valid &= np.all(sv[taps.index] | ~used, axis=0)
    acc = np.zeros((c, taps.index.shape[1]))
    for k in range(4):
        vals = flat[:, taps.index[k]]
        acc += np.where(used[k], vals * taps.weight[k], 0.0)
    acc = np.where(valid, acc, 0.0)
    return acc.reshape(c, *out_shape), valid.reshape(out_shape)


def _check_intrinsics(*Ks: Intrinsics):
    for K in Ks:
        if abs(np.linalg.det(K.K)) < 1e-12:
            raise ValueError("singular intrinsics")


def pixel_grid(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    return np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))


def intrinsic_align_coords(
    K_src: Intrinsics, K_dst: Intrinsics, dst_size: tuple[int, int]
) -> tuple[np.ndarray, np.ndarray]:
    """Source coordinates K_src @ inv(K_dst) @ (x, y, 1) for every destination pixel."""
    _check_intrinsics(K_src, K_dst)
    width, height = dst_size
    x2, y2 = pixel_grid(width, height)
    M = K_src.K @ K_dst.K_inv
    pts = M @ np.stack([x2.ravel(), y2.ravel(), np.ones(x2.size)])
    return (pts[0] / pts[2]).reshape(height, width), (pts[1] / pts[2]).reshape(height, width)


def _source_validity(raster: Raster) -> np.ndarray | None:
    if raster.tag in ("depth_m", "phase_rad"):
        return raster.valid_mask()
    return None


def _fill_invalid(raster: Raster, values: np.ndarray, valid: np.ndarray) -> np.ndarray:
    if raster.tag == "phase_rad":
        return np.where(valid[None], values, np.nan)
    return values


def intrinsic_align(
    image: Raster, K_src: Intrinsics, K_dst: Intrinsics, dst_size: tuple[int, int] | None = None
) -> Raster:
    """Resample ``image`` (taken with K_src) onto a camera with intrinsics K_dst.

    ``dst_size`` is (width, height) and defaults to the source size. Depth and phase rasters are
    resampled validity-aware: a destination pixel touching an invalid source pixel is invalid.
    """
    size = dst_size or (image.width, image.height)
    xs, ys = intrinsic_align_coords(K_src, K_dst, size)
    values, valid = sample_bilinear(image.data, xs, ys, _source_validity(image))
    return Raster(_fill_invalid(image, values, valid), image.tag)


@dataclass(frozen=True)
class WarpField:
    """Per-target-pixel source coordinates plus validity."""

    xs: np.ndarray
    ys: np.ndarray
    valid: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.xs.shape

    @classmethod
    def identity(cls, width: int, height: int) -> "WarpField":
        xs, ys = pixel_grid(width, height)
        return cls(xs, ys, np.ones((height, width), dtype=bool))


def depth_warp_field(
    depth_dst: np.ndarray, K_src: Intrinsics, K_dst: Intrinsics, pose_dst_to_src: Extrinsics
) -> WarpField:
    """Source coordinates h(K_src (R d K_dst^-1 p + t)) for each destination pixel with depth d."""
    _check_intrinsics(K_src, K_dst)
    depth = np.asarray(depth_dst, dtype=np.float64)
    if depth.ndim == 3:
        depth = depth[0]
    height, width = depth.shape
    ok = depth_valid(depth)
    d = np.where(ok, depth, 0.0).ravel()
    x, y = pixel_grid(width, height)
    rays = K_dst.K_inv @ np.stack([x.ravel(), y.ravel(), np.ones(x.size)])
    X = pose_dst_to_src.apply(rays * d)
    front = ok.ravel() & (X[2] > 0)
    z = np.where(front, X[2], 1.0)
    proj = K_src.K @ X
    xs = np.where(front, proj[0] / z, np.nan).reshape(height, width)
    ys = np.where(front, proj[1] / z, np.nan).reshape(height, width)
    return WarpField(xs, ys, front.reshape(height, width))


def apply_warp(image: np.ndarray, warp: WarpField, src_valid: np.ndarray | None = None):
    values, valid = sample_bilinear(image, warp.xs, warp.ys, src_valid)
    valid &= warp.valid
    return np.where(valid, values, 0.0), valid


def backward_warp_with_depth(
    source: Raster,
    depth_dst: Raster,
    K_src: Intrinsics,
    K_dst: Intrinsics,
    pose_dst_to_src: Extrinsics,
) -> tuple[Raster, np.ndarray]:
    """Pull ``source`` into the destination view using the destination depth map.

    Returns the warped raster (destination resolution) and its validity mask. Pixels with invalid
    depth, points behind the source camera and out-of-view samples are invalid and zero.
    """
    warp = depth_warp_field(depth_dst.data[0], K_src, K_dst, pose_dst_to_src)
    values, valid = apply_warp(source.data, warp, _source_validity(source))
    return Raster(_fill_invalid(source, values, valid), source.tag), valid


def forward_splat_depth(
    depth_src: Raster,
    K_src: Intrinsics,
    K_dst: Intrinsics,
    pose_src_to_dst: Extrinsics,
    dst_size: tuple[int, int],
) -> Raster:
    """Project every valid source pixel into the destination camera with a z-buffer.

    Each point lands on the nearest destination pixel; the smallest destination-frame z wins.
    ``dst_size`` is (width, height). Unhit pixels are 0 (invalid).
    """
    _check_intrinsics(K_src, K_dst)
    depth = depth_src.data[0].astype(np.float64)
    height, width = depth.shape
    ok = depth_valid(depth).ravel()
    x, y = pixel_grid(width, height)
    rays = K_src.K_inv @ np.stack([x.ravel(), y.ravel(), np.ones(x.size)])
    X = pose_src_to_dst.apply(rays[:, ok] * depth.ravel()[ok])
    front = X[2] > 0
    X = X[:, front]
    proj = K_dst.K @ X
    u = np.rint(proj[0] / X[2]).astype(np.int64)
    v = np.rint(proj[1] / X[2]).astype(np.int64)
    dw, dh = dst_size
    inside = (u >= 0) & (u < dw) & (v >= 0) & (v < dh)
    zbuf = np.full(dh * dw, np.inf)
    # minimum reduction is order-independent, so the result does not depend on point order
    np.minimum.at(zbuf, v[inside] * dw + u[inside], X[2][inside])
    out = np.where(np.isfinite(zbuf), zbuf, 0.0).reshape(1, dh, dw)
    return Raster(out, "depth_m")


def resample_warp_field(warp: WarpField, scale: int) -> WarpField:
    """Warp field for an image downsampled by ``scale`` (a power of two dividing both sides)."""
    if scale < 1 or scale & (scale - 1):
        raise ValueError("scale must be a power of two")
    height, width = warp.shape
    if height % scale or width % scale:
        raise ValueError(f"scale {scale} does not divide {width}x{height}")
    if scale == 1:
        return warp
    lw, lh = width // scale, height // scale
    gx, gy = pixel_grid(lw, lh)
    # low-res pixel centres in full-res coordinates
    fx = (gx + 0.5) * scale - 0.5
    fy = (gy + 0.5) * scale - 0.5
    coords = np.stack([np.where(warp.valid, warp.xs, 0.0), np.where(warp.valid, warp.ys, 0.0)])
    values, valid = sample_bilinear(coords, fx, fy, warp.valid)
    xs = (values[0] + 0.5) / scale - 0.5
    ys = (values[1] + 0.5) / scale - 0.5
    return WarpField(np.where(valid, xs, np.nan), np.where(valid, ys, np.nan), valid)
