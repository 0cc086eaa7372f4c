"""End-to-end acceptance checks, one test per criterion.

Each test records a ``criterion N: PASS|FAIL ...`` line; the full list is printed in the pytest
terminal summary. The training criteria (6 and 7) simulate a 200-frame corpus and train three
models, which takes several minutes on one CPU core.
"""

import csv
import math
import time

import numpy as np
import pytest

from tofu.cli import load_model, main, warp_context
from tofu.core import Raster
from tofu.dataset import Dataset, network_batch
from tofu.geometry import (
    backward_warp_with_depth,
    depth_warp_field,
    forward_splat_depth,
    intrinsic_align,
    intrinsic_align_coords,
)
from tofu.metrics import METRIC_COLUMNS, compute_metrics, gross_error_rate
from tofu.nn import AttentionFusion, FusionModule, FusionNet, FusionNetConfig, grad_check, loss_total, ops, parameter
from tofu.nn.train import predict
from tofu.phase import unwrap_dual_frequency, unwrap_fixed, wrapped_phase
from tofu.sensor import (
    EmitterConfig,
    correlate_closed_form,
    correlate_numerical,
    default_calibration,
    simulate_correlations,
    unambiguous_range,
)

F1, F2 = 20e6, 25e6


def run(*argv):
    return main([str(a) for a in argv])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def noiseless_frame(depths, f, far):
    """Correlations for a row of depths; albedo grows as d^2 so every pixel returns the same amplitude."""
    d = np.asarray(depths, dtype=np.float64)[None]
    albedo = (d / far) ** 2
    return simulate_correlations(Raster(d, "depth_m"), Raster(albedo, "generic"), EmitterConfig(f, 2000.0))


# -- 1 -----------------------------------------------------------------------------------------


def test_correlation_matches_integral(criterion):
    start = time.perf_counter()
    phi = np.linspace(0, 2 * math.pi, 20, endpoint=False)[:, None, None]
    tau = np.linspace(0, 2 * math.pi, 20, endpoint=False)[None, :, None]
    a = np.linspace(0.2, 1.0, 5)[None, None, :]
    omega = 2 * math.pi * F1
    # ten whole periods: the trapezoid rule on a periodic integrand is exact up to rounding
    num = correlate_numerical(a, phi, tau, omega, 10 / F1, 640)
    ref = correlate_closed_form(a, phi, tau)
    # relative to the correlation amplitude a/2, since the closed form itself crosses zero
    err = float(np.max(np.abs(num - ref) / (a / 2)))
    elapsed = time.perf_counter() - start
    ok = err < 1e-4 and elapsed < 10 and num.shape == (20, 20, 5)
    criterion(1, ok, f"closed form vs integral over 20x20x5 grid: max rel err {err:.2e}, {elapsed:.2f} s")
    assert ok


# -- 2 -----------------------------------------------------------------------------------------


def test_dual_frequency_round_trip(criterion, rng):
    start = time.perf_counter()
    depths = np.concatenate([np.linspace(15 / 5000, 15, 5000), rng.uniform(1e-3, 15, 5000), [15.0]])
    p1 = wrapped_phase(noiseless_frame(depths, F1, 15.0))
    p2 = wrapped_phase(noiseless_frame(depths, F2, 15.0))
    got = unwrap_dual_frequency(p1, p2, F1, F2, 15.0).depth.data[0, 0].astype(np.float64)
    err = float(np.max(np.abs(got - depths)))
    elapsed = time.perf_counter() - start
    ok = err < 1e-4 and elapsed < 10
    criterion(2, ok, f"depth -> correlations -> dual-frequency unwrap over {depths.size} depths: max err {err:.2e} m, {elapsed:.2f} s")
    assert ok


# -- 3 -----------------------------------------------------------------------------------------


def test_wrap_law(criterion, rng):
    depths = rng.uniform(1e-3, 45.0, 10_000)
    r = unambiguous_range(F1)
    got = unwrap_fixed(wrapped_phase(noiseless_frame(depths, F1, 45.0)), 0, F1).data[0, 0].astype(np.float64)
    gap = np.abs(got - np.mod(depths, r))
    # remainders next to a whole multiple of the range may land on the other side of it
    gap = np.minimum(gap, r - gap)
    err = float(gap.max())
    ok = err < 1e-4
    criterion(3, ok, f"n=0 reconstruction equals d mod {r:.5f} m on 10^4 depths: max err {err:.2e} m")
    assert ok


# -- 4 -----------------------------------------------------------------------------------------


def naive_bilinear(img, x, y):
    h, w = img.shape
    x = min(max(x, 0.0), w - 1)
    y = min(max(y, 0.0), h - 1)
    x0, y0 = int(math.floor(x)), int(math.floor(y))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    ax, ay = x - x0, y - y0
    return (img[y0, x0] * (1 - ax) + img[y0, x1] * ax) * (1 - ay) + (img[y1, x0] * (1 - ax) + img[y1, x1] * ax) * ay


def test_geometry_oracles(criterion, rng):
    cal = default_calibration(64, 64)
    K_t, K_r, pose = cal.tof, cal.rgb, cal.tof_to_rgb
    src = rng.random((64, 64))

    # intrinsic alignment: per-pixel K_src @ inv(K_dst) @ p and the bilinear value at that point
    aligned = intrinsic_align(Raster(src, "generic"), K_r, K_t).data[0].astype(np.float64)
    M = K_r.K @ np.linalg.inv(K_t.K)
    xs, ys = intrinsic_align_coords(K_r, K_t, (64, 64))
    align_px, align_val = 0.0, 0.0
    for y in range(64):
        for x in range(64):
            q = M @ np.array([x, y, 1.0])
            u, v = q[0] / q[2], q[1] / q[2]
            align_px = max(align_px, abs(xs[y, x] - u), abs(ys[y, x] - v))
            if -0.5 <= u <= 63.5 and -0.5 <= v <= 63.5:
                align_val = max(align_val, abs(aligned[y, x] - naive_bilinear(src, u, v)))

    # backward warp: h(K_src (R d K_dst^-1 p + t)) pixel by pixel
    depth = rng.uniform(1.0, 12.0, (64, 64))
    field = depth_warp_field(depth, K_r, K_t, pose)
    warped, valid = backward_warp_with_depth(Raster(src, "generic"), Raster(depth, "depth_m"), K_r, K_t, pose)
    warp_px, warp_val = 0.0, 0.0
    Kt_inv = np.linalg.inv(K_t.K)
    for y in range(64):
        for x in range(64):
            X = pose.R @ (depth[y, x] * (Kt_inv @ np.array([x, y, 1.0]))) + pose.t
            q = K_r.K @ X
            u, v = q[0] / q[2], q[1] / q[2]
            warp_px = max(warp_px, abs(field.xs[y, x] - u), abs(field.ys[y, x] - v))
            if valid[y, x]:
                warp_val = max(warp_val, abs(float(warped.data[0, y, x]) - naive_bilinear(src, u, v)))

    # splat a 3 m RGB-view plane into the ToF camera, then pull it back into the RGB view
    plane = Raster(np.full((1, 64, 64), 3.0), "depth_m")
    tof_depth = forward_splat_depth(plane, K_r, K_t, pose.inverse(), (64, 64))
    back, back_ok = backward_warp_with_depth(tof_depth, plane, K_t, K_r, pose.inverse())
    gx, gy = np.meshgrid(np.arange(64.0), np.arange(64.0))
    rays = np.linalg.inv(K_r.K) @ np.stack([gx.ravel(), gy.ravel(), np.ones(gx.size)])
    z_tof = pose.inverse().apply(3.0 * rays)[2].reshape(64, 64)
    trip = float(np.max(np.abs(back.data[0].astype(np.float64) - z_tof)[back_ok]))

    ok = align_val < 1e-5 and warp_px < 1e-5 and warp_val < 1e-5 and align_px < 1e-5 and trip < 1e-3 and back_ok.mean() > 0.25
    criterion(
        4,
        ok,
        f"align coord err {align_px:.1e} px, value err {align_val:.1e}; warp coord err {warp_px:.1e} px, value err {warp_val:.1e}; "
        f"3 m plane splat/warp round trip {trip:.1e} m over {back_ok.mean():.0%} of pixels",
    )
    assert ok


# -- 5 -----------------------------------------------------------------------------------------

REDUCED = dict(height=32, width=32, enc_widths=(4, 8, 8, 16, 16), dec_widths=(8, 8, 4, 4, 4))


def primitive_checks(rng):
    def p(*shape):
        return parameter(rng.normal(size=shape))

    x, y = p(2, 3, 6, 6), p(2, 3, 6, 6)
    x.data = np.where(np.abs(x.data) < 1e-3, 0.5, x.data)
    w3, w1, b = p(4, 3, 3, 3), p(4, 3, 1, 1), p(4)
    warp = rng.uniform(0, 1, (2, 16, 36))
    cases = {
        "conv3x3": (lambda: ops.conv2d(x, w3, b, 1), {"x": x, "w": w3, "b": b}),
        "conv3x3/2": (lambda: ops.conv2d(x, w3, b, 2), {"x": x, "w": w3, "b": b}),
        "conv1x1": (lambda: ops.conv2d(x, w1, b, 1), {"x": x, "w": w1, "b": b}),
        "relu": (lambda: ops.relu(x), {"x": x}),
        "sigmoid": (lambda: ops.sigmoid(x), {"x": x}),
        "add": (lambda: ops.add(x, y), {"x": x, "y": y}),
        "mul": (lambda: ops.mul(x, y), {"x": x, "y": y}),
        "concat": (lambda: ops.concat([x, y]), {"x": x, "y": y}),
        "resize": (lambda: ops.resize_bilinear(x, (12, 12)), {"x": x}),
        "softmax": (lambda: ops.softmax(x), {"x": x}),
        "matmul": (lambda: ops.matmul(x, y), {"x": x, "y": y}),
        "warp": (lambda: ops.sample_with_matrix(x, warp, (4, 4)), {"x": x}),
    }
    worst = 0.0
    for name, (fn, inputs) in cases.items():
        proj = rng.normal(size=fn().shape)
        worst = max(worst, grad_check(lambda: ops.project(fn(), proj), inputs, samples=20).max_rel_error)
    target, mask = rng.uniform(1, 5, (2, 3, 6, 6)), rng.random((2, 3, 6, 6)) > 0.3
    d = parameter(rng.uniform(1, 5, (2, 3, 6, 6)))
    worst = max(worst, grad_check(lambda: ops.masked_l1(d, target, mask), {"d": d}).max_rel_error)
    worst = max(worst, grad_check(lambda: ops.edge_aware_smoothness(d, target), {"d": d}).max_rel_error)
    return worst


def block_check(block, rng, shape):
    a, b = parameter(rng.normal(size=shape)), parameter(rng.normal(size=shape))
    proj = rng.normal(size=shape)
    return grad_check(lambda: ops.project(block(a, b), proj), {"a": a, "b": b, **block.named_parameters()}).max_rel_error


def end_to_end(placement, kind, dtype, rng):
    cal = default_calibration(32, 32)
    ctx = warp_context(cal)
    tof = rng.normal(0, 200, (1, 4, 32, 32))
    rgb = rng.uniform(0, 1, (1, 3, 32, 32))
    net = FusionNet(FusionNetConfig(placement=placement, kind=kind, dtype=dtype, **REDUCED))
    ref = FusionNet(FusionNetConfig(placement=placement, kind=kind, dtype="float64", **REDUCED))
    for name, p in net.named_parameters().items():
        if name.endswith("bias"):
            # zero-initialised biases put pre-activations of dead regions exactly on the ReLU kink
            p.data = rng.normal(0, 0.05, p.shape).astype(dtype)
    for p, q in zip(net.named_parameters().values(), ref.named_parameters().values()):
        q.data = p.data.astype(np.float64)
    # GT near the initial prediction keeps the loss small, so FD round-off stays small too
    first = net(tof.astype(dtype), rgb.astype(dtype), ctx)
    p0 = first["rgb"][1].data.astype(np.float64)
    gt = np.clip(p0 + rng.normal(0, 0.3, p0.shape), 1, 15)
    gt[..., :3] = 0.0
    if placement == "all":
        # differentiate with the warp coordinates held fixed, as they are detached in training
        net.freeze_warps()
        ref.frozen_warps = dict(net.last_warps)

    def objective(model):
        dt = model.config.dtype
        return lambda: loss_total(model(tof.astype(dt), rgb.astype(dt), ctx), gt, gt, rgb).total

    reference = None if dtype == "float64" else (objective(ref), ref.named_parameters())
    return grad_check(objective(net), net.named_parameters(), samples=0.01, reference=reference).max_rel_error


def test_gradient_battery(criterion, rng):
    start = time.perf_counter()
    results = {"primitives": primitive_checks(rng)}
    results["fusion"] = block_check(FusionModule(3, rng=rng, dtype=np.float64), rng, (2, 3, 5, 5))
    results["attention"] = block_check(AttentionFusion(3, rng=rng, dtype=np.float64), rng, (2, 3, 2, 3))
    e2e = {}
    for placement, kind in [("none", "gated"), ("bottleneck", "gated"), ("bottleneck", "attention"), ("all", "gated"), ("all", "attention")]:
        for dtype in ("float64", "float32"):
            e2e[(placement, kind, dtype)] = end_to_end(placement, kind, dtype, rng)
    elapsed = time.perf_counter() - start
    f64 = max([results["primitives"], results["fusion"], results["attention"]] + [v for k, v in e2e.items() if k[2] == "float64"])
    f32 = max(v for k, v in e2e.items() if k[2] == "float32")
    ok = f64 < 1e-5 and f32 < 1e-3 and elapsed < 300
    parts = ", ".join(f"{k}={v:.1e}" for k, v in results.items())
    criterion(5, ok, f"{parts}; end-to-end f64 max {f64:.1e}, f32 max {f32:.1e}; {elapsed:.0f} s")
    assert ok


# -- 6 and 7 -----------------------------------------------------------------------------------

SWEEP = ("none", "bottleneck:gated", "bottleneck:attention")
STEPS = 1000


@pytest.fixture(scope="module")
def sweep(tmp_path_factory):
    """200 frames with strong shot noise; three variants trained for equal budgets by the eval sweep."""
    root = tmp_path_factory.mktemp("accept")
    ds = root / "ds"
    start = time.perf_counter()
    assert run("simulate", "--count", 200, "--seed", 1, "--noise-sigma", 1, "--shot-scale", 1, "--ambient-dc", 50, "--out", ds) == 0
    out = root / "sweep.csv"
    code = run(
        "eval", ds, "--sweep", "--variants", ",".join(SWEEP), "--work", root / "work", "--epochs", STEPS,
        "--max-steps", STEPS, "--batch-size", 4, "--lr", 1e-3, "--seed", 0, "--out", out,
    )
    assert code == 0
    rows = {(r["Fusion"], r["Branch"]): r for r in read_csv(out)}
    return {"ds": Dataset(ds), "rows": rows, "work": root / "work", "seconds": time.perf_counter() - start}


def test_fusion_beats_tof_only(criterion, sweep):
    ds = sweep["ds"]
    beyond = valid = 0
    for fid in ds.ids():
        g = ds.load(fid).gt_tof.data[0]
        valid += np.count_nonzero(g > 0)
        beyond += np.count_nonzero(g > unambiguous_range(F1))
    share = beyond / valid
    val = network_batch(ds, ds.ids("val"))
    half_wrap = unambiguous_range(F1) / 2
    gross = {}
    for name, branch, gt in (("none_gated", "tof", val.gt_tof), ("bottleneck_gated", "rgb", val.gt_rgb)):
        net, cal, _ = load_model(sweep["work"] / f"{name}.tofw")
        pred = predict(net, val.tof, val.rgb, warp_context(cal))[branch]
        gross[name] = gross_error_rate(pred[:, 0].reshape(-1, pred.shape[-1]), gt[:, 0].reshape(-1, gt.shape[-1]), half_wrap)
    tof_only = float(sweep["rows"][("none", "I-ToF")]["rmse"])
    fused = float(sweep["rows"][("bottleneck-gated", "RGB")]["rmse"])
    reduction = 1 - fused / tof_only
    ratio = gross["bottleneck_gated"] / gross["none_gated"]
    ok = share >= 0.30 and reduction >= 0.10 and ratio <= 0.5
    criterion(
        6,
        ok,
        f"{share:.0%} of GT beyond the wrap range; ToF-only RMSE {tof_only:.3f} m -> fused RGB-branch {fused:.3f} m "
        f"({reduction:.0%} lower); gross-error rate {gross['none_gated']:.4f} -> {gross['bottleneck_gated']:.4f} "
        f"({ratio:.0%} of ToF-only); corpus + sweep {sweep['seconds']:.0f} s",
    )
    assert ok


def test_ablation_ordering(criterion, sweep):
    rows = sweep["rows"]
    none = float(rows[("none", "I-ToF")]["rmse"])
    gated = float(rows[("bottleneck-gated", "RGB")]["rmse"])
    attention = float(rows[("bottleneck-attention", "RGB")]["rmse"])
    hard = gated < none and attention < none
    expected = gated <= attention <= none
    note = "" if expected else " (warning: gated <= attention <= none not observed at this budget)"
    criterion(
        7,
        hard,
        f"RMSE none {none:.3f}, bottleneck-attention {attention:.3f}, bottleneck-gated {gated:.3f}{note}",
    )
    if not expected:
        import warnings

        warnings.warn(f"ablation ordering differs from the expected direction: {note.strip()}")
    assert hard


# -- 8 -----------------------------------------------------------------------------------------


def brute_force(pred, gt):
    rows = [(float(p), float(g)) for p, g in zip(np.ravel(pred), np.ravel(gt)) if math.isfinite(g) and g > 0]
    n = len(rows)
    out = {
        "rmse": math.sqrt(math.fsum((p - g) ** 2 for p, g in rows) / n),
        "rel_abs": math.fsum(abs(p - g) / g for p, g in rows) / n,
        "rel_sqr": math.fsum((p - g) ** 2 / g for p, g in rows) / n,
    }
    for k in (1, 2, 3):
        out[f"delta{k}"] = 100.0 * sum(1 for p, g in rows if p > 0 and max(p / g, g / p) < 1.25**k) / n
    return out


def test_metrics_against_enumeration(criterion, rng):
    worst, mismatched = 0.0, 0
    # exact ratios of 1.25, 1.25^2 and 1.25^3 in both directions sit on the strict thresholds
    edges = [(2.5, 2.0), (2.0, 2.5), (5.0, 4.0), (1.5625, 1.0), (1.0, 1.5625), (1.953125, 1.0), (1.0, 1.953125)]
    for trial in range(300):
        shape = tuple(rng.integers(1, 8, 2))
        gt = rng.uniform(0.5, 12, shape)
        pred = gt * rng.choice([1.0, 1.1, 1.3, 0.7, 2.0], shape) + rng.normal(0, 0.2, shape) * (trial % 2)
        gt[rng.random(shape) < 0.2] = 0.0
        k = min(len(edges), gt.size)
        for (p, g), idx in zip(edges, rng.choice(gt.size, k, replace=False)):
            pred.flat[idx], gt.flat[idx] = p, g
        if not (gt > 0).any():
            continue
        got = compute_metrics(pred, gt)
        ref = brute_force(pred, gt)
        for key in ("delta1", "delta2", "delta3"):
            mismatched += getattr(got, key) != ref[key]
        for key in ("rmse", "rel_abs", "rel_sqr"):
            worst = max(worst, abs(getattr(got, key) - ref[key]) / max(abs(ref[key]), 1e-300))
    exact = compute_metrics(np.array([2.5, 1.5625, 1.953125]), np.array([2.0, 1.0, 1.0]))
    edges_ok = (exact.delta1, exact.delta2, exact.delta3) == (0.0, 100.0 * 1 / 3, 100.0 * 2 / 3)
    ok = mismatched == 0 and worst < 1e-12 and edges_ok
    criterion(
        8,
        ok,
        f"300 random maps with exact 1.25^n ratios: {mismatched} threshold mismatches, "
        f"continuous metrics within {worst:.1e} relative of the enumeration",
    )
    assert ok


# -- 9 -----------------------------------------------------------------------------------------


def test_reruns_are_byte_identical(criterion, tmp_path):
    gen = tmp_path / "gen.json"
    gen.write_text('{"width": 32, "height": 32}')
    noise = ("--noise-sigma", 3, "--shot-scale", 2, "--ambient-dc", 20, "--dropout", 0.02, "--quantize8")
    for name in ("a", "b"):
        d = tmp_path / name
        assert run("simulate", "--scene", gen, "--count", 6, "--seed", 11, *noise, "--freq-hz", F1, "--freq-hz", F2, "--out", d / "ds") == 0
        assert run("train", d / "ds", "--placement", "all", "--epochs", 3, "--batch-size", 2, "--seed", 5, "--out", d / "m.tofw") == 0
        assert run("reconstruct", d / "ds", "--method", "dual-freq", "--out", d / "rec") == 0
        assert run("eval", d / "ds", "--checkpoint", d / "m.tofw", "--reconstruction", d / "rec", "--out", d / "e.csv") == 0
    a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
    differing = sorted(k for k in a if a[k] != b.get(k))
    ok = set(a) == set(b) and not differing
    columns = read_csv(tmp_path / "a" / "e.csv")[0].keys()
    ok = ok and list(columns) == ["Backbone", "Fusion", "Branch", *METRIC_COLUMNS]
    criterion(9, ok, f"simulate/train/reconstruct/eval reruns: {len(a)} files compared, {len(differing)} differ")
    assert ok
