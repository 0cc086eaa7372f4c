"""Named-tensor binary container ("TOFW"), little-endian, f32 payloads."""

from __future__ import annotations

import struct

import numpy as np

from .tensor import Tensor

MAGIC = b"TOFW"
VERSION = 1


class CheckpointError(ValueError):
    pass


def header_size(names_and_shapes) -> int:
    """Bytes of metadata: 12-byte preamble plus per-tensor name/rank/dims records."""
    total = 12
    for name, shape in names_and_shapes:
        total += 2 + len(name.encode("utf-8")) + 1 + 4 * len(shape)
    return total


def encode_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {name[:40]}...")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_tensors(blob: bytes) -> dict[str, np.ndarray]:
    view = memoryview(blob)
    if len(view) < 12 or bytes(view[:4]) != MAGIC:
        raise CheckpointError("not a TOFW checkpoint")
    version, count = struct.unpack_from("<II", view, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", view, pos)
            pos += 2
            name = bytes(view[pos : pos + n]).decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", view, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", view, pos)
            pos += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * size > len(view):
                raise CheckpointError(f"truncated payload for tensor {name}")
            out[name] = np.frombuffer(view, dtype="<f4", count=size, offset=pos).reshape(shape).copy()
            pos += 4 * size
    except struct.error as exc:
        raise CheckpointError("truncated checkpoint header") from exc
    if pos != len(view):
        raise CheckpointError(f"{len(view) - pos} trailing bytes after the last tensor")
    return out


def save_checkpoint(params: dict[str, Tensor], state=None) -> bytes:
    """Serialize parameters and, optionally, Adam moments and step count."""
    tensors = {name: p.data for name, p in params.items()}
    if state is not None:
        for name in params:
            if name in state.m:
                tensors[f"adam.m.{name}"] = state.m[name]
                tensors[f"adam.v.{name}"] = state.v[name]
        tensors["adam.step"] = np.array([state.step], dtype=np.float32)
    return encode_tensors(tensors)


def load_checkpoint(blob: bytes, params: dict[str, Tensor], state=None) -> dict[str, Tensor]:
    """Copy stored values into ``params`` (and ``state``); every parameter must be present with its shape."""
    stored = decode_tensors(blob)
    missing = sorted(n for n in params if n not in stored)
    if missing:
        raise CheckpointError("checkpoint is missing tensors: " + ", ".join(missing))
    bad = [f"{n} {stored[n].shape} != {params[n].shape}" for n in sorted(params) if stored[n].shape != params[n].shape]
    if bad:
        raise CheckpointError("shape mismatch: " + "; ".join(bad))
    for name, p in params.items():
        p.data = stored[name].astype(p.dtype)
    if state is not None and "adam.step" in stored:
        state.step = int(stored["adam.step"][0])
        state.m = {n: stored[f"adam.m.{n}"].astype(params[n].dtype) for n in params if f"adam.m.{n}" in stored}
        state.v = {n: stored[f"adam.v.{n}"].astype(params[n].dtype) for n in params if f"adam.v.{n}" in stored}
    return params
