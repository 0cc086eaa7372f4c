"""Four-phase correlation forward model and sensor noise."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import CONTROL_PHASES, SPEED_OF_LIGHT, CorrelationFrame, Raster, depth_valid


@dataclass(frozen=True)
class EmitterConfig:
    """Modulated IR source. ``source_amplitude`` is the return amplitude at 1 m for albedo 1."""

    mod_freq_hz: float = 20e6
    source_amplitude: float = 2000.0

    def __post_init__(self):
        if not self.mod_freq_hz > 0:
            raise ValueError("mod_freq_hz must be positive")
        if not self.source_amplitude > 0:
            raise ValueError("source_amplitude must be positive")

    @property
    def unambiguous_range(self) -> float:
        return unambiguous_range(self.mod_freq_hz)


@dataclass(frozen=True)
class NoiseConfig:
    read_sigma: float = 0.0
    shot_scale: float = 0.0
    ambient_dc: float = 0.0
    dropout_prob: float = 0.0
    quantize_8bit: bool = False
    seed: int = 0
    quantize_range: tuple[float, float] | None = None

    def __post_init__(self):
        if self.read_sigma < 0 or self.shot_scale < 0:
            raise ValueError("read_sigma and shot_scale must be non-negative")
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ValueError("dropout_prob must lie in [0, 1]")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")

    @property
    def is_identity(self) -> bool:
        return (
            self.read_sigma == 0
            and self.shot_scale == 0
            and self.ambient_dc == 0
            and self.dropout_prob == 0
            and not self.quantize_8bit
        )


def unambiguous_range(mod_freq_hz: float) -> float:
    return SPEED_OF_LIGHT / (2.0 * mod_freq_hz)


def correlate_closed_form(a, phi, tau):
    """Mean of cos(wt - tau) * (1 + a cos(wt - phi)) over whole periods: (a/2) cos(phi - tau)."""
    return 0.5 * np.asarray(a, dtype=np.float64) * np.cos(np.asarray(phi) - np.asarray(tau))


def correlate_numerical(a, phi, tau, omega_rad_s: float, T: float, steps: int):
    """Trapezoidal estimate of (1/T) * integral over [-T/2, T/2] of d(t) * r(t).

    ``a``, ``phi`` and ``tau`` broadcast against each other; the time axis is appended last.
    """
    if not (T > 0 and steps > 0 and omega_rad_s > 0):
        raise ValueError("T, steps and omega must be positive")
    a = np.asarray(a, dtype=np.float64)[..., None]
    phi = np.asarray(phi, dtype=np.float64)[..., None]
    tau = np.asarray(tau, dtype=np.float64)[..., None]
    t = np.linspace(-T / 2, T / 2, int(steps) + 1)
    wt = omega_rad_s * t
    demod = np.cos(wt - tau)
    returned = 1.0 + a * np.cos(wt - phi)
    return np.trapezoid(demod * returned, t, axis=-1) / T


def depth_to_phase(depth_m, mod_freq_hz: float):
    """Unwrapped phase 4*pi*f*d/c for positive depths."""
    depth = np.asarray(depth_m, dtype=np.float64)
    if not mod_freq_hz > 0:
        raise ValueError("mod_freq_hz must be positive")
    if np.any(~(depth > 0)):
        raise ValueError("depth must be positive")
    out = 4.0 * math.pi * mod_freq_hz * depth / SPEED_OF_LIGHT
    return out if out.ndim else float(out)


def return_amplitude(depth_m, albedo, source_amplitude: float):
    """Inverse-square attenuated return amplitude a0 * rho / d^2."""
    depth = np.asarray(depth_m, dtype=np.float64)
    return source_amplitude * np.asarray(albedo, dtype=np.float64) / depth**2


def simulate_correlations(depth: Raster, albedo: Raster, emitter: EmitterConfig) -> CorrelationFrame:
    """Noiseless four-phase correlation frame for a depth map and an IR albedo map."""
    d = np.asarray(depth.data[0], dtype=np.float64)
    rho = np.asarray(albedo.data[0], dtype=np.float64)
    if d.shape != rho.shape:
        raise ValueError(f"depth {d.shape} and albedo {rho.shape} differ in size")
    valid = depth_valid(d)
    if np.any(valid & ~((rho > 0) & (rho <= 1))):
        raise ValueError("albedo of valid pixels must lie in (0, 1]")
    dv = np.where(valid, d, 1.0)
    amp = np.where(valid, return_amplitude(dv, rho, emitter.source_amplitude), 0.0)
    phi = np.where(valid, 4.0 * math.pi * emitter.mod_freq_hz * dv / SPEED_OF_LIGHT, 0.0)
    planes = np.stack([correlate_closed_form(amp, phi, tau) for tau in CONTROL_PHASES])
    return CorrelationFrame.from_array(planes.astype(np.float32), emitter.mod_freq_hz)


def default_quantize_range(source_amplitude: float, noise: NoiseConfig) -> tuple[float, float]:
    half = source_amplitude / 2.0 + 3.0 * noise.read_sigma
    return (noise.ambient_dc - half, noise.ambient_dc + half)


def _streams(seed: int):
    children = np.random.SeedSequence(seed).spawn(3)
    return [np.random.Generator(np.random.Philox(s)) for s in children]


def apply_noise(
    frame: CorrelationFrame, noise: NoiseConfig, *, source_amplitude: float | None = None
) -> CorrelationFrame:
    """Dropout, ambient offset, read noise, shot noise and optional 8-bit quantization.

    Shot noise has variance ``shot_scale * (|v| + ambient_dc)``. Each noise source draws from its
    own Philox stream, so switching one source on or off leaves the others' samples unchanged.
    """
    if noise.is_identity:
        return frame
    v = frame.data.astype(np.float64)
    drop_rng, gauss_rng, shot_rng = _streams(noise.seed)
    _, h, w = v.shape
    if noise.dropout_prob > 0:
        lost = drop_rng.random((h, w)) < noise.dropout_prob
        v = np.where(lost[None], 0.0, v)
    out = v.copy()
    if noise.ambient_dc != 0:
        out += noise.ambient_dc
    if noise.read_sigma > 0:
        out += gauss_rng.normal(0.0, noise.read_sigma, size=v.shape)
    if noise.shot_scale > 0:
        kappa = noise.shot_scale
        lam = np.maximum(np.abs(v) + noise.ambient_dc, 0.0) / kappa
        sign = np.where(v < 0, -1.0, 1.0)
        out += sign * kappa * (shot_rng.poisson(lam) - lam)
    bit_depth = frame.bit_depth
    if noise.quantize_8bit:
        if noise.quantize_range is not None:
            lo, hi = noise.quantize_range
        elif source_amplitude is not None:
            lo, hi = default_quantize_range(source_amplitude, noise)
        else:
            raise ValueError("8-bit quantization needs quantize_range or source_amplitude")
        step = (hi - lo) / 255.0
        code = np.clip(np.rint((out - lo) / step), 0, 255)
        out = lo + code * step
        bit_depth = "u8"
    return CorrelationFrame.from_array(out.astype(np.float32), frame.mod_freq_hz, bit_depth)
