"""Calibration documents: ToF/RGB pinhole intrinsics plus the ToF-to-RGB rigid transform.

Document schema (UTF-8 JSON)::

    {"tof": {"fx": .., "fy": .., "cx": .., "cy": ..},
     "rgb": {"fx": .., "fy": .., "cx": .., "cy": ..},
     "extrinsics_tof_to_rgb": {"R": [9 numbers, row-major], "t": [3 numbers]}}
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .raster import Extrinsics, Intrinsics, RasterError


class CalibrationError(RasterError):
    pass


@dataclass(frozen=True)
class Calibration:
    tof: Intrinsics
    rgb: Intrinsics
    tof_to_rgb: Extrinsics

    def to_dict(self) -> dict:
        return {
            "tof": self.tof.to_dict(),
            "rgb": self.rgb.to_dict(),
            "extrinsics_tof_to_rgb": self.tof_to_rgb.to_dict(),
        }

    def to_json(self) -> bytes:
        return (json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n").encode("utf-8")

    def __iter__(self):
        return iter((self.tof, self.rgb, self.tof_to_rgb))


def _intrinsics(doc: dict, key: str) -> Intrinsics:
    if key not in doc:
        raise CalibrationError(f"missing field {key}")
    block = doc[key]
    try:
        values = {k: float(block[k]) for k in ("fx", "fy", "cx", "cy")}
    except KeyError as exc:
        raise CalibrationError(f"missing field {key}.{exc.args[0]}") from exc
    except (TypeError, ValueError) as exc:
        raise CalibrationError(f"bad intrinsics block {key!r}") from exc
    try:
        return Intrinsics(**values)
    except RasterError as exc:
        raise CalibrationError(f"{key}: {exc}") from exc


def load_calibration(blob: bytes | str) -> Calibration:
    """Parse and validate a calibration document."""
    if isinstance(blob, bytes):
        blob = blob.decode("utf-8")
    try:
        doc = json.loads(blob)
    except json.JSONDecodeError as exc:
        raise CalibrationError(f"calibration is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise CalibrationError("calibration document must be an object")
    tof = _intrinsics(doc, "tof")
    rgb = _intrinsics(doc, "rgb")
    try:
        ext = doc["extrinsics_tof_to_rgb"]
        R, t = ext["R"], ext["t"]
    except (KeyError, TypeError) as exc:
        raise CalibrationError(f"missing field extrinsics_tof_to_rgb.{exc.args[0]}") from exc
    if len(R) != 9 or len(t) != 3:
        raise CalibrationError("R needs 9 numbers and t needs 3")
    try:
        extr = Extrinsics([float(v) for v in R], [float(v) for v in t])
    except RasterError as exc:
        raise CalibrationError(str(exc)) from exc
    return Calibration(tof, rgb, extr)
