import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from tofu.core import Raster
from tofu.metrics import METRIC_COLUMNS, compute_metrics, gross_error_rate, metrics_from_pairs


def reference(pred, gt):
    """Plain-Python loop over valid pixels."""
    rows = [(float(p), float(g)) for p, g in zip(np.ravel(pred), np.ravel(gt)) if math.isfinite(g) and g > 0]
    n = len(rows)
    out = {
        "rmse": math.sqrt(sum((p - g) ** 2 for p, g in rows) / n),
        "rel_abs": sum(abs(p - g) / g for p, g in rows) / n,
        "rel_sqr": sum((p - g) ** 2 / g for p, g in rows) / n,
    }
    for k in (1, 2, 3):
        hits = sum(1 for p, g in rows if p > 0 and max(p / g, g / p) < 1.25**k)
        out[f"delta{k}"] = 100.0 * hits / n
    return out


depth_maps = hnp.arrays(np.float64, (6, 7), elements=st.floats(0.1, 20.0))


@given(depth_maps, depth_maps)
def test_matches_reference(pred, gt):
    gt = gt.copy()
    gt[0, :3] = 0.0  # some invalid pixels
    got = compute_metrics(pred, gt)
    ref = reference(pred, gt)
    for key in METRIC_COLUMNS:
        assert getattr(got, key) == pytest.approx(ref[key], rel=1e-9, abs=1e-12)
    assert got.n_valid == 39


def test_threshold_is_strict():
    gt = np.full((4, 4), 2.0)
    r = compute_metrics(gt + 0.5, gt)
    assert r.delta1 == 0.0
    assert r.delta2 == 100.0 and r.delta3 == 100.0
    assert r.rmse == pytest.approx(0.5)


def test_factor_two_fails_all_thresholds():
    gt = np.linspace(1, 5, 16).reshape(4, 4)
    r = compute_metrics(2 * gt, gt)
    assert (r.delta1, r.delta2, r.delta3) == (0.0, 0.0, 0.0)


def test_perfect_prediction():
    gt = np.linspace(1, 5, 16).reshape(1, 4, 4)
    r = compute_metrics(Raster(gt, "depth_m"), Raster(gt, "depth_m"))
    assert r.rmse == 0.0 and r.rel_abs == 0.0 and r.delta1 == 100.0


@given(depth_maps, depth_maps, st.randoms(use_true_random=False))
def test_permutation_invariance(pred, gt, rnd):
    order = list(range(pred.size))
    rnd.shuffle(order)
    a = metrics_from_pairs(pred.ravel(), gt.ravel())
    b = metrics_from_pairs(pred.ravel()[order], gt.ravel()[order])
    for key in METRIC_COLUMNS:
        assert getattr(a, key) == pytest.approx(getattr(b, key), rel=1e-12, abs=1e-12)


@given(depth_maps, depth_maps, st.floats(0.1, 10.0))
def test_scale_behaviour(pred, gt, s):
    a = compute_metrics(pred, gt)
    b = compute_metrics(pred * s, gt * s)
    assert b.rmse == pytest.approx(s * a.rmse, rel=1e-9)
    assert b.rel_abs == pytest.approx(a.rel_abs, rel=1e-9)
    assert b.rel_sqr == pytest.approx(s * a.rel_sqr, rel=1e-9)
    # ratios are scale-free up to rounding right at a threshold
    assert abs(b.delta1 - a.delta1) <= 2 * 100.0 / pred.size


def test_no_valid_pixels_raises():
    with pytest.raises(ValueError, match="no valid"):
        compute_metrics(np.ones((3, 3)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        compute_metrics(np.ones((3, 3)), np.ones((3, 4)))


def test_range_clip():
    gt = np.array([[1.0, 5.0, 12.0]])
    pred = np.array([[1.0, 6.0, 0.0]])
    r = compute_metrics(pred, gt, range_clip=(0.5, 10.0))
    assert r.n_valid == 2
    assert r.rmse == pytest.approx(math.sqrt(0.5))


def test_csv_row_header():
    r = compute_metrics(np.full((2, 2), 2.0), np.full((2, 2), 2.0))
    header, row = r.csv_row().splitlines()
    assert header == "rmse,rel_abs,rel_sqr,delta1,delta2,delta3,n_valid"
    assert row.split(",")[-1] == "4"


def test_gross_error_rate():
    gt = np.array([[1.0, 2.0, 3.0, 0.0]])
    assert gross_error_rate(np.array([[1.0, 6.0, 3.1, 9.0]]), gt, 3.747) == pytest.approx(1 / 3)
