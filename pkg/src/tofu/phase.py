"""Classical reconstruction: wrapped phase, amplitude, unwrapping and depth conversion.

Invalid phase pixels are NaN; invalid depth pixels are 0.0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import SPEED_OF_LIGHT, CorrelationFrame, Raster

TWO_PI = 2.0 * math.pi
DEFAULT_RESIDUAL_GATE = 0.25  # meters
RANGE_SLACK = 1e-4  # meters of tolerance on the max_range candidate cut


def unambiguous_range(mod_freq_hz: float) -> float:
    return SPEED_OF_LIGHT / (2.0 * mod_freq_hz)


def _planes(frame: CorrelationFrame | np.ndarray) -> np.ndarray:
    data = frame.data if isinstance(frame, CorrelationFrame) else np.asarray(frame)
    if data.shape[0] != 4:
        raise ValueError("expected a 4-channel correlation frame")
    return data.astype(np.float64)


def wrapped_phase_values(planes: np.ndarray, eps_sig: float | None = None) -> np.ndarray:
    """Array version of :func:`wrapped_phase`; returns float64 phase with NaN for degenerate pixels."""
    c = _planes(planes)
    re = c[0] - c[1]
    im = c[2] - c[3]
    if eps_sig is None:
        eps_sig = 1e-6 * float(np.max(np.abs(c))) if c.size else 0.0
    phi = np.mod(np.arctan2(im, re), TWO_PI)
    # fmod can round up to exactly 2*pi for tiny negative angles
    phi = np.where(phi >= TWO_PI, 0.0, phi)
    degenerate = (np.abs(re) < eps_sig) & (np.abs(im) < eps_sig)
    degenerate |= (re == 0) & (im == 0)
    return np.where(degenerate, np.nan, phi)


def wrapped_phase(frame: CorrelationFrame, eps_sig: float | None = None) -> Raster:
    """Per-pixel atan2(C3 - C4, C1 - C2) folded into [0, 2*pi).

    Pixels where both differences fall below ``eps_sig`` (default 1e-6 of the frame's peak
    magnitude) are returned as NaN.
    """
    return Raster(wrapped_phase_values(frame, eps_sig)[None], "phase_rad")


def amplitude_from_correlations(frame: CorrelationFrame) -> Raster:
    c = _planes(frame)
    return Raster(np.hypot(c[0] - c[1], c[2] - c[3])[None], "amplitude")


def phase_to_depth(phi_unwrapped, mod_freq_hz: float):
    """D = (c / 2f) * phi / (2*pi). NaN passes through."""
    phi = np.asarray(phi_unwrapped, dtype=np.float64)
    if not mod_freq_hz > 0:
        raise ValueError("mod_freq_hz must be positive")
    if np.any(phi < 0):
        raise ValueError("phase must be non-negative")
    out = unambiguous_range(mod_freq_hz) * phi / TWO_PI
    return out if out.ndim else float(out)


def _phase_array(phase) -> np.ndarray:
    if isinstance(phase, Raster):
        return phase.data[0].astype(np.float64)
    return np.asarray(phase, dtype=np.float64)


def unwrap_fixed(phase: Raster | np.ndarray, n, mod_freq_hz: float) -> Raster:
    """Depth for a fixed wrap count ``n`` (scalar, or a per-pixel integer map) on every valid pixel."""
    n = np.asarray(n)
    if np.any(n < 0):
        raise ValueError("wrap count n must be non-negative")
    phi = _phase_array(phase)
    valid = np.isfinite(phi)
    depth = phase_to_depth(np.where(valid, phi, 0.0) + TWO_PI * n, mod_freq_hz)
    return Raster(np.where(valid, depth, 0.0)[None], "depth_m")


@dataclass(frozen=True)
class UnwrapResult:
    depth: Raster
    n_map: np.ndarray  # (2, H, W) wrap counts per frequency, -1 where invalid
    residual: np.ndarray  # (H, W) |d1 - d2| in meters, NaN where no phase


def _candidates(phi: np.ndarray, freq: float, max_range: float):
    r = unambiguous_range(freq)
    n_count = int(math.ceil((max_range + RANGE_SLACK) / r))
    ns = np.arange(n_count)
    d = r * (phi[None] / TWO_PI + ns.reshape(-1, *([1] * phi.ndim)))
    return ns, d


def unwrap_dual_frequency(
    phase1,
    phase2,
    f1_hz: float,
    f2_hz: float,
    max_range_m: float,
    residual_gate: float = DEFAULT_RESIDUAL_GATE,
) -> UnwrapResult:
    """Exhaustive (n1, n2) search picking the pair whose two depths agree best.

    Candidates deeper than ``max_range_m`` are discarded. Exact ties go to the smaller n1 + n2
    (then smaller n1). Pixels whose best residual exceeds ``residual_gate`` are invalid.
    """
    if f1_hz == f2_hz:
        raise ValueError("dual-frequency unwrapping needs two distinct frequencies")
    if not max_range_m > 0:
        raise ValueError("max_range must be positive")
    lcm_range = _common_range(f1_hz, f2_hz)
    if lcm_range is not None and max_range_m > lcm_range + RANGE_SLACK:
        raise ValueError(f"max_range {max_range_m} m exceeds the common unambiguous range {lcm_range:.4f} m")
    p1 = _phase_array(phase1)
    p2 = _phase_array(phase2)
    if p1.shape != p2.shape:
        raise ValueError("phase maps differ in size")
    ok = np.isfinite(p1) & np.isfinite(p2)
    p1 = np.where(ok, p1, 0.0)
    p2 = np.where(ok, p2, 0.0)
    n1s, d1 = _candidates(p1, f1_hz, max_range_m)
    n2s, d2 = _candidates(p2, f2_hz, max_range_m)
    limit = max_range_m + RANGE_SLACK
    has_pair = (d1 <= limit).any(axis=0) & (d2 <= limit).any(axis=0)
    if ok.any() and not (has_pair & ok).any():
        raise ValueError("empty candidate set: max_range is too small")

    best_res = np.full(p1.shape, np.inf)
    best_n1 = np.full(p1.shape, -1)
    best_n2 = np.full(p1.shape, -1)
    # visit pairs in (n1 + n2, n1) order so strict improvement implements the tie-break
    order = sorted(((a, b) for a in n1s for b in n2s), key=lambda ab: (ab[0] + ab[1], ab[0]))
    for a, b in order:
        res = np.abs(d1[a] - d2[b])
        allowed = (d1[a] <= limit) & (d2[b] <= limit)
        better = allowed & (res < best_res)
        best_res = np.where(better, res, best_res)
        best_n1 = np.where(better, a, best_n1)
        best_n2 = np.where(better, b, best_n2)

    found = ok & np.isfinite(best_res)
    n1 = np.where(found, best_n1, 0)
    n2 = np.where(found, best_n2, 0)
    depth1 = np.take_along_axis(d1, n1[None], axis=0)[0]
    depth2 = np.take_along_axis(d2, n2[None], axis=0)[0]
    depth = 0.5 * (depth1 + depth2)
    valid = found & (best_res <= residual_gate)
    n_map = np.stack([np.where(valid, n1, -1), np.where(valid, n2, -1)])
    residual = np.where(found, best_res, np.nan)
    return UnwrapResult(
        Raster(np.where(valid, depth, 0.0)[None], "depth_m"),
        n_map,
        residual,
    )


def _common_range(f1: float, f2: float) -> float | None:
    """c / (2 * gcd(f1, f2)) for integer-Hz frequencies, else None."""
    if float(f1).is_integer() and float(f2).is_integer():
        return unambiguous_range(math.gcd(int(f1), int(f2)))
    return None
