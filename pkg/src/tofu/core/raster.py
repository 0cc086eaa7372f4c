"""Raster containers, camera calibration types and the invalid-pixel convention."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s

SemanticTag = Literal["correlation", "depth_m", "phase_rad", "amplitude", "rgb", "generic"]
TAGS = ("correlation", "depth_m", "phase_rad", "amplitude", "rgb", "generic")

# Correlation channel order: C1=c0, C2=c180, C3=c90, C4=c270.
CONTROL_PHASES = (0.0, math.pi, math.pi / 2, 3 * math.pi / 2)


class RasterError(ValueError):
    pass


def depth_valid(depth: np.ndarray) -> np.ndarray:
    """Mask of valid depth values (finite and strictly positive)."""
    depth = np.asarray(depth)
    with np.errstate(invalid="ignore"):
        return np.isfinite(depth) & (depth > 0)


@dataclass(frozen=True, eq=False)
class Raster:
    """Channel-planar float32 image. ``data`` has shape (channels, height, width)."""

    data: np.ndarray
    tag: SemanticTag = "generic"

    def __post_init__(self):
        if self.tag not in TAGS:
            raise RasterError(f"unknown semantic tag {self.tag!r}")
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3:
            raise RasterError(f"raster data must be (C,H,W), got shape {arr.shape}")
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def plane(self, c: int = 0) -> np.ndarray:
        return self.data[c]

    def valid_mask(self) -> np.ndarray:
        """Per-pixel validity. Depth uses the <=0/non-finite convention, others use finiteness."""
        if self.tag == "depth_m":
            return depth_valid(self.data).all(axis=0)
        return np.isfinite(self.data).all(axis=0)

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return (
            self.tag == other.tag
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )

    def __hash__(self):
        return hash((self.tag, self.data.shape, self.data.tobytes()))


@dataclass(frozen=True, eq=False)
class CorrelationFrame:
    """Four raw correlation planes in the order (c0, c180, c90, c270)."""

    raster: Raster
    mod_freq_hz: float
    bit_depth: Literal["f32", "u8"] = "f32"

    def __post_init__(self):
        if self.raster.channels != 4:
            raise RasterError(f"correlation frame needs 4 channels, got {self.raster.channels}")
        if not (self.mod_freq_hz > 0):
            raise RasterError("mod_freq_hz must be positive")
        if self.bit_depth not in ("f32", "u8"):
            raise RasterError(f"unknown bit depth {self.bit_depth!r}")
        if self.raster.tag != "correlation":
            object.__setattr__(self, "raster", Raster(self.raster.data, "correlation"))

    @classmethod
    def from_array(cls, data, mod_freq_hz: float, bit_depth="f32") -> "CorrelationFrame":
        return cls(Raster(data, "correlation"), float(mod_freq_hz), bit_depth)

    @property
    def data(self) -> np.ndarray:
        return self.raster.data

    @property
    def height(self) -> int:
        return self.raster.height

    @property
    def width(self) -> int:
        return self.raster.width

    def __eq__(self, other):
        if not isinstance(other, CorrelationFrame):
            return NotImplemented
        return (
            self.raster == other.raster
            and np.float32(self.mod_freq_hz) == np.float32(other.mod_freq_hz)
            and self.bit_depth == other.bit_depth
        )


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise RasterError(f"intrinsic {name} must be finite")
        if not (self.fx > 0 and self.fy > 0):
            raise RasterError("focal lengths must be positive")

    @property
    def K(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]], dtype=np.float64
        )

    @property
    def K_inv(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ],
            dtype=np.float64,
        )

    def scaled(self, scale: float) -> "Intrinsics":
        """Intrinsics of the image downsampled by ``scale`` (pixel centres at integers)."""
        return Intrinsics(
            self.fx / scale,
            self.fy / scale,
            (self.cx + 0.5) / scale - 0.5,
            (self.cy + 0.5) / scale - 0.5,
        )

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}


ORTHO_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class Extrinsics:
    """Rigid transform X_dst = R @ X_src + t (meters)."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3).copy()
        t = np.asarray(self.t, dtype=np.float64).reshape(3).copy()
        if not (np.isfinite(R).all() and np.isfinite(t).all()):
            raise RasterError("extrinsics must be finite")
        dev = np.abs(R.T @ R - np.eye(3)).max()
        if dev > ORTHO_TOL:
            raise RasterError(f"non-orthonormal rotation (max |R^T R - I| = {dev:.3g})")
        if abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise RasterError("rotation must have determinant +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "Extrinsics":
        return cls(np.eye(3), np.zeros(3))

    def inverse(self) -> "Extrinsics":
        return Extrinsics(self.R.T, -self.R.T @ self.t)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform (3, N) points."""
        return self.R @ points + self.t[:, None]

    def to_dict(self) -> dict:
        return {"R": [float(v) for v in self.R.ravel()], "t": [float(v) for v in self.t]}

    def __eq__(self, other):
        if not isinstance(other, Extrinsics):
            return NotImplemented
        return np.array_equal(self.R, other.R) and np.array_equal(self.t, other.t)
