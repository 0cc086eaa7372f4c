from .calibration import Calibration, CalibrationError, load_calibration
from .formats import FormatError, decode_raster, encode_raster
from .raster import (
    CONTROL_PHASES,
    SPEED_OF_LIGHT,
    CorrelationFrame,
    Extrinsics,
    Intrinsics,
    Raster,
    RasterError,
    depth_valid,
)

__all__ = [
    "CONTROL_PHASES",
    "SPEED_OF_LIGHT",
    "Calibration",
    "CalibrationError",
    "CorrelationFrame",
    "Extrinsics",
    "FormatError",
    "Intrinsics",
    "Raster",
    "RasterError",
    "decode_raster",
    "depth_valid",
    "encode_raster",
    "load_calibration",
]
