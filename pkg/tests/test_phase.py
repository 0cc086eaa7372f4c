import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tofu.core import CONTROL_PHASES, CorrelationFrame, Raster
from tofu.phase import (
    amplitude_from_correlations,
    phase_to_depth,
    unwrap_dual_frequency,
    unwrap_fixed,
    wrapped_phase,
)
from tofu.sensor import EmitterConfig, simulate_correlations, unambiguous_range
from tofu.sensor.correlation import correlate_closed_form, depth_to_phase

F1, F2 = 20e6, 25e6
R1 = 7.494811450  # c / (2 * 20 MHz)
TWO_PI = 2 * math.pi


def frame_of(values):
    return CorrelationFrame.from_array(np.asarray(values, dtype=np.float64).reshape(4, 1, -1), F1)


def depth_frame(depths, f=F1, amplitude=100.0):
    """Noiseless f32 frame at a constant return amplitude (so faint far pixels stay well above zero)."""
    phi = depth_to_phase(np.atleast_2d(np.asarray(depths, dtype=np.float64)), f)
    planes = np.stack([correlate_closed_form(amplitude, phi, tau) for tau in CONTROL_PHASES])
    return CorrelationFrame.from_array(planes.astype(np.float32), f)


def test_simulator_frame_matches_closed_form():
    d = np.array([[2.0, 4.5]])
    sim = simulate_correlations(Raster(d, "depth_m"), Raster(np.ones_like(d), "generic"), EmitterConfig(F1, 2000.0))
    got = wrapped_phase(sim).data[0].astype(np.float64)
    np.testing.assert_allclose(got, depth_to_phase(d, F1), atol=1e-6)


def circular_gap(a, b):
    d = np.mod(np.asarray(a) - np.asarray(b), TWO_PI)
    return np.minimum(d, TWO_PI - d)


def test_canonical_quadrants():
    a = 3.0
    p = wrapped_phase(frame_of([[a / 2], [-a / 2], [0], [0]])).data[0, 0]
    q = wrapped_phase(frame_of([[0], [0], [a / 2], [-a / 2]])).data[0, 0]
    assert p[0] == 0.0
    assert q[0] == pytest.approx(math.pi / 2, abs=1e-7)


def test_phase_round_trip_through_simulator(rng):
    phi = rng.uniform(0, TWO_PI, 10_000)
    phi = phi[phi > 1e-6]
    frame = depth_frame(phi / TWO_PI * R1)
    got = wrapped_phase(frame).data[0, 0].astype(np.float64)
    assert circular_gap(got, phi).max() < 1e-6


def test_wrapped_phase_range_and_monotone():
    phi = np.linspace(0, TWO_PI, 2000, endpoint=False)
    planes = np.stack([0.5 * np.cos(phi), -0.5 * np.cos(phi), 0.5 * np.sin(phi), -0.5 * np.sin(phi)])
    got = wrapped_phase(frame_of(planes)).data[0, 0].astype(np.float64)
    assert np.all((got >= 0) & (got < TWO_PI))
    assert np.all(np.diff(got) > 0)


def test_degenerate_pixel_is_invalid():
    got = wrapped_phase(frame_of([[0, 10], [0, -10], [0, 0], [0, 0]])).data[0, 0]
    assert np.isnan(got[0]) and got[1] == 0.0


def test_amplitude_examples():
    phi = np.linspace(0, TWO_PI, 97)
    planes = np.stack([50 * np.cos(phi), -50 * np.cos(phi), 50 * np.sin(phi), -50 * np.sin(phi)])
    amp = amplitude_from_correlations(frame_of(planes)).data[0, 0].astype(np.float64)
    np.testing.assert_allclose(amp, 100.0, atol=1e-5)
    assert amplitude_from_correlations(frame_of(np.zeros((4, 1)))).data[0, 0, 0] == 0.0


def test_phase_to_depth_values():
    assert phase_to_depth(0.0, F1) == 0.0
    assert phase_to_depth(TWO_PI, F1) == pytest.approx(7.49481, abs=1e-5)
    assert phase_to_depth(math.pi, F1) == pytest.approx(3.74740, abs=1e-5)
    with pytest.raises(ValueError):
        phase_to_depth(-0.1, F1)


def test_unwrap_fixed_examples():
    ph9 = wrapped_phase(depth_frame([9.0]))
    assert unwrap_fixed(ph9, 1, F1).data[0, 0, 0] == pytest.approx(9.0, abs=1e-4)
    ph3 = wrapped_phase(depth_frame([3.0]))
    assert unwrap_fixed(ph3, 0, F1).data[0, 0, 0] == pytest.approx(3.0, abs=1e-4)
    assert unwrap_fixed(ph3, 1, F1).data[0, 0, 0] == pytest.approx(3.0 + R1, abs=1e-4)
    with pytest.raises(ValueError):
        unwrap_fixed(ph3, -1, F1)


def test_unwrap_fixed_zero_equals_direct_conversion(rng):
    phase = rng.uniform(0, TWO_PI, (5, 5))
    direct = phase_to_depth(phase, F1)
    np.testing.assert_array_equal(unwrap_fixed(phase, 0, F1).data[0], direct.astype(np.float32))


@given(st.lists(st.floats(1e-3, 40.0), min_size=1, max_size=200))
def test_wrap_law_property(depths):
    d = np.array(depths)
    got = unwrap_fixed(wrapped_phase(depth_frame(d)), 0, F1).data[0, 0].astype(np.float64)
    expect = np.mod(d, R1)
    gap = np.abs(got - expect)
    # a remainder next to a multiple of the range may legitimately land on the other side
    gap = np.minimum(gap, R1 - gap)
    assert gap.max() < 1e-4


def dual(depths, max_range=15.0, **kw):
    p1 = wrapped_phase(depth_frame(depths, F1))
    p2 = wrapped_phase(depth_frame(depths, F2))
    return unwrap_dual_frequency(p1, p2, F1, F2, max_range, **kw)


def test_dual_frequency_nine_meters():
    res = dual([9.0])
    assert res.depth.data[0, 0, 0] == pytest.approx(9.0, abs=1e-4)
    assert res.n_map[:, 0, 0].tolist() == [1, 1]
    assert res.residual[0, 0] < 1e-6
    # wrapped remainders of the two frequencies
    assert 9.0 - R1 == pytest.approx(1.50519, abs=1e-5)
    assert 9.0 - unambiguous_range(F2) == pytest.approx(3.00415, abs=1e-5)


def test_dual_frequency_no_wrap():
    res = dual([3.0])
    assert res.n_map[:, 0, 0].tolist() == [0, 0]
    assert res.depth.data[0, 0, 0] == pytest.approx(3.0, abs=1e-4)


def test_dual_frequency_noise_monte_carlo(rng):
    trials = 10_000
    p1 = np.mod(TWO_PI * 9.0 / R1 + rng.normal(0, 0.05, trials), TWO_PI)
    p2 = np.mod(TWO_PI * 9.0 / unambiguous_range(F2) + rng.normal(0, 0.05, trials), TWO_PI)
    res = unwrap_dual_frequency(p1[None], p2[None], F1, F2, 15.0)
    correct = (res.n_map[0] == 1) & (res.n_map[1] == 1)
    assert correct.mean() >= 0.99


def brute_force(p1, p2, f1, f2, max_range, gate):
    r1, r2 = unambiguous_range(f1), unambiguous_range(f2)
    best = None
    for n1 in range(200):
        d1 = r1 * (p1 / TWO_PI + n1)
        if d1 > max_range + 1e-4:
            break
        for n2 in range(200):
            d2 = r2 * (p2 / TWO_PI + n2)
            if d2 > max_range + 1e-4:
                break
            key = (abs(d1 - d2), n1 + n2, n1)
            if best is None or key < best[0]:
                best = (key, n1, n2, 0.5 * (d1 + d2))
    if best is None or best[0][0] > gate:
        return -1, -1, 0.0
    return best[1], best[2], best[3]


def test_dual_frequency_equals_brute_force(rng):
    p1 = rng.uniform(0, TWO_PI, (6, 6))
    p2 = rng.uniform(0, TWO_PI, (6, 6))
    res = unwrap_dual_frequency(p1, p2, F1, F2, 15.0, residual_gate=1.0)
    for i in range(6):
        for j in range(6):
            n1, n2, d = brute_force(p1[i, j], p2[i, j], F1, F2, 15.0, 1.0)
            assert res.n_map[:, i, j].tolist() == [n1, n2]
            assert res.depth.data[0, i, j] == np.float32(d)


def test_dual_frequency_tie_prefers_smaller_counts():
    # equal frequencies would tie everywhere; a 10/20 MHz pair ties at phase 0 on both
    res = unwrap_dual_frequency(np.zeros((1, 1)), np.zeros((1, 1)), 10e6, 20e6, 14.0)
    assert res.n_map[:, 0, 0].tolist() == [0, 0]


def test_dual_frequency_errors():
    p = np.full((2, 2), 3.0)
    with pytest.raises(ValueError):
        unwrap_dual_frequency(p, p, F1, F1, 10.0)
    with pytest.raises(ValueError):
        unwrap_dual_frequency(p, p, F1, F2, 40.0)
    with pytest.raises(ValueError, match="empty candidate"):
        unwrap_dual_frequency(p, p, F1, F2, 0.5)


def test_invalid_phase_stays_invalid():
    p = np.array([[np.nan, 1.0]])
    res = unwrap_dual_frequency(p, p, F1, F2, 15.0)
    assert res.depth.data[0, 0, 0] == 0.0
    assert res.n_map[:, 0, 0].tolist() == [-1, -1]
