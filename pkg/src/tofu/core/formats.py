"""Byte-level raster formats: PFM, PGM8 (binary P5) and the TOFC correlation container.

TOFC layout (all little-endian)::

    b"TOFC" | version u32 (=1) | width u32 | height u32 | channels u32 | mod_freq_hz f32
    | payload f32[channels * height * width], channel-planar, row-major

Depth rasters are written with every invalid pixel replaced by 0.0.
"""

from __future__ import annotations

import re
import struct

import numpy as np

from .raster import CorrelationFrame, Raster, RasterError, depth_valid

TOFC_MAGIC = b"TOFC"
TOFC_VERSION = 1
TOFC_HEADER = struct.Struct("<4sIIIIf")
MAX_PIXELS = 1 << 28


class FormatError(RasterError):
    pass


def _disk_planes(raster: Raster) -> np.ndarray:
    data = raster.data
    if raster.tag == "depth_m":
        data = np.where(depth_valid(data), data, np.float32(0.0)).astype(np.float32)
    return data


def encode_raster(
    raster: Raster | CorrelationFrame,
    fmt: str,
    *,
    mod_freq_hz: float | None = None,
    value_range: tuple[float, float] | None = None,
) -> bytes:
    """Serialize a raster. ``fmt`` is one of ``"PFM"``, ``"TOFC"``, ``"PGM8"``."""
    fmt = fmt.upper()
    frame = None
    if isinstance(raster, CorrelationFrame):
        frame, raster = raster, raster.raster
    if fmt == "PFM":
        return _encode_pfm(raster)
    if fmt == "TOFC":
        freq = frame.mod_freq_hz if frame is not None else mod_freq_hz
        if freq is None:
            raise FormatError("TOFC needs a modulation frequency")
        return _encode_tofc(raster, freq)
    if fmt == "PGM8":
        quantized = frame is not None and frame.bit_depth == "u8"
        if raster.channels != 1 and not quantized:
            raise FormatError("PGM8 supports single-channel or 8-bit quantized correlation rasters")
        return _encode_pgm8(raster, value_range)
    raise FormatError(f"unknown format {fmt!r}")


def _encode_pfm(raster: Raster) -> bytes:
    if raster.channels == 1:
        head = "Pf"
        body = _disk_planes(raster)[0]
    elif raster.channels == 3:
        head = "PF"
        body = np.moveaxis(_disk_planes(raster), 0, -1)
    else:
        raise FormatError(f"PFM supports 1 or 3 channels, got {raster.channels}")
    # scanlines are stored bottom-to-top
    body = np.ascontiguousarray(body[::-1], dtype="<f4")
    header = f"{head}\n{raster.width} {raster.height}\n-1.0\n".encode("ascii")
    return header + body.tobytes()


def _encode_tofc(raster: Raster, mod_freq_hz: float) -> bytes:
    header = TOFC_HEADER.pack(
        TOFC_MAGIC, TOFC_VERSION, raster.width, raster.height, raster.channels, float(mod_freq_hz)
    )
    return header + np.ascontiguousarray(_disk_planes(raster), dtype="<f4").tobytes()


def _encode_pgm8(raster: Raster, value_range) -> bytes:
    data = raster.data.reshape(-1, raster.width).astype(np.float64)
    if value_range is not None:
        lo, hi = value_range
        if not hi > lo:
            raise FormatError("value_range must be increasing")
        data = np.rint((data - lo) * (255.0 / (hi - lo)))
    if not np.isfinite(data).all() or data.min() < 0 or data.max() > 255 or (data != np.rint(data)).any():
        raise FormatError("PGM8 payload must be integers in [0, 255] (pass value_range to quantize)")
    header = f"P5\n{raster.width} {data.shape[0]}\n255\n".encode("ascii")
    return header + data.astype(np.uint8).tobytes()


def decode_raster(
    blob: bytes,
    *,
    tag: str | None = None,
    channels: int = 1,
    value_range: tuple[float, float] | None = None,
) -> Raster | CorrelationFrame:
    """Parse bytes produced by :func:`encode_raster`.

    TOFC with four channels yields a :class:`CorrelationFrame`; everything else a :class:`Raster`.
    ``channels`` only matters for PGM8, where planes are stacked vertically.
    """
    blob = bytes(blob)
    if blob[:4] == TOFC_MAGIC:
        return _decode_tofc(blob, tag)
    if blob[:2] in (b"Pf", b"PF"):
        return _decode_pfm(blob, tag)
    if blob[:2] == b"P5":
        return _decode_pgm8(blob, tag, channels, value_range)
    raise FormatError("unknown magic")


def _check_dims(w: int, h: int, c: int):
    if w <= 0 or h <= 0 or c <= 0:
        raise FormatError(f"bad dimensions {w}x{h}x{c}")
    if w * h * c > MAX_PIXELS:
        raise FormatError(f"dimension overflow: {w}x{h}x{c}")


_PFM_HEADER = re.compile(rb"^(P[fF])\s+(\d+)\s+(\d+)\s+(\S+)\s")


def _decode_pfm(blob: bytes, tag):
    m = _PFM_HEADER.match(blob)
    if m is None:
        raise FormatError("corrupt PFM header")
    kind, w, h, scale = m.group(1), int(m.group(2)), int(m.group(3)), m.group(4)
    try:
        scale = float(scale)
    except ValueError as exc:
        raise FormatError("corrupt PFM scale") from exc
    if scale == 0 or not np.isfinite(scale):
        raise FormatError("corrupt PFM scale")
    c = 3 if kind == b"PF" else 1
    _check_dims(w, h, c)
    n = w * h * c
    payload = blob[m.end():]
    if len(payload) < 4 * n:
        raise FormatError(f"truncated PFM payload: need {4 * n} bytes, got {len(payload)}")
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(payload, dtype=dtype, count=n).astype(np.float32)
    if c == 1:
        planes = arr.reshape(h, w)[::-1][None]
    else:
        planes = np.moveaxis(arr.reshape(h, w, 3)[::-1], -1, 0)
    default_tag = "rgb" if c == 3 else "generic"
    return Raster(planes, tag or default_tag)


def _decode_tofc(blob: bytes, tag):
    if len(blob) < TOFC_HEADER.size:
        raise FormatError("truncated TOFC header")
    magic, version, w, h, c, freq = TOFC_HEADER.unpack_from(blob)
    if version != TOFC_VERSION:
        raise FormatError(f"unsupported TOFC version {version}")
    _check_dims(w, h, c)
    n = w * h * c
    payload = blob[TOFC_HEADER.size:]
    if len(payload) != 4 * n:
        raise FormatError(f"truncated TOFC payload: need {4 * n} bytes, got {len(payload)}")
    arr = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(c, h, w)
    if c == 4 and tag in (None, "correlation"):
        return CorrelationFrame(Raster(arr, "correlation"), float(freq))
    return Raster(arr, tag or "generic")


_PGM_HEADER = re.compile(rb"^P5\s+(\d+)\s+(\d+)\s+(\d+)\s")


def _decode_pgm8(blob: bytes, tag, channels, value_range):
    m = _PGM_HEADER.match(blob)
    if m is None:
        raise FormatError("corrupt PGM header")
    w, rows, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise FormatError("only maxval 255 is supported")
    if rows % channels:
        raise FormatError(f"{rows} rows cannot hold {channels} stacked planes")
    h = rows // channels
    _check_dims(w, h, channels)
    payload = blob[m.end():]
    if len(payload) < w * rows:
        raise FormatError("truncated PGM payload")
    arr = np.frombuffer(payload, dtype=np.uint8, count=w * rows).astype(np.float64)
    if value_range is not None:
        lo, hi = value_range
        arr = lo + arr * ((hi - lo) / 255.0)
    return Raster(arr.reshape(channels, h, w), tag or "generic")
