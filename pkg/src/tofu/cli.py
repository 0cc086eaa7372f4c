"""``tofu`` command line: simulate, reconstruct, train, eval and infer.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure (NaN/inf).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .core import CorrelationFrame, Raster, RasterError, decode_raster, encode_raster, load_calibration
from .dataset import Dataset, DatasetError, network_batch, write_dataset
from .geometry import intrinsic_align
from .metrics import METRIC_COLUMNS, compute_metrics, format_table, format_value, metrics_from_pairs
from .nn import FusionNet, FusionNetConfig, NonFiniteError, OptimizerState, WarpContext, ops
from .nn.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .nn.train import TrainConfig, predict, train
from .phase import unambiguous_range, unwrap_dual_frequency, unwrap_fixed, wrapped_phase
from .sensor import NoiseConfig, SceneGenerator, scene_from_dict

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERIC = 3

EVAL_COLUMNS = ("Backbone", "Fusion", "Branch") + METRIC_COLUMNS
BACKBONE = "toy-enc32"
SWEEP_VARIANTS = ("none", "bottleneck:gated", "bottleneck:attention", "all:gated", "all:attention")
BRANCH_LABELS = {"tof": "I-ToF", "rgb": "RGB"}


class CliError(Exception):
    """Validation failure reported with exit code 2."""


def worker_count() -> int:
    raw = os.environ.get("TOFU_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise CliError(f"TOFU_THREADS must be an integer, got {raw!r}") from exc
    return max(1, n)


def _pmap(fn, items):
    n = worker_count()
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _write_csv(path: Path, columns, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([format_value(r[c]) if not isinstance(r[c], str) else r[c] for c in columns])


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise CliError(f"no such file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON ({exc})") from exc


# -- simulate ------------------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    doc = _read_json(args.scene) if args.scene else {}
    noise = NoiseConfig(
        read_sigma=args.noise_sigma,
        shot_scale=args.shot_scale,
        ambient_dc=args.ambient_dc,
        dropout_prob=args.dropout,
        quantize_8bit=args.quantize8,
    )
    if "primitives" in doc:
        generator, scene = None, scene_from_dict(doc)
    else:
        generator, scene = SceneGenerator.from_config(doc), None
    write_dataset(
        args.out,
        count=args.count,
        seed=args.seed,
        generator=generator,
        scene=scene,
        noise=noise,
        freqs=args.freq_hz,
        val_fraction=args.val_fraction,
        workers=worker_count(),
    )
    print(f"wrote {args.count} frames to {args.out}")
    return EXIT_OK


# -- reconstruct ---------------------------------------------------------------------------------


def _reconstruct_frame(ds: Dataset, fid: str, args) -> Raster:
    rec = ds.load(fid)
    f1 = ds.freqs[0]
    phase1 = wrapped_phase(rec.correlations[0])
    if args.method == "wrapped":
        return unwrap_fixed(phase1, 0, f1)
    if args.method == "fixed-n":
        if args.oracle_n:
            gt = rec.gt_tof.data[0].astype(np.float64)
            base = unwrap_fixed(phase1, 0, f1).data[0].astype(np.float64)
            n = np.where(gt > 0, np.rint((gt - base) / unambiguous_range(f1)), 0).astype(int)
            return unwrap_fixed(phase1, np.maximum(n, 0), f1)
        return unwrap_fixed(phase1, args.n, f1)
    if len(ds.freqs) < 2:
        raise CliError("dual-freq reconstruction needs a dataset simulated with two --freq-hz values")
    phase2 = wrapped_phase(rec.correlations[1])
    max_range = args.max_range
    if max_range is None:
        gen = ds.manifest.get("generator") or {}
        max_range = float(gen.get("depth_range", [0, 15.0])[1])
    return unwrap_dual_frequency(phase1, phase2, f1, ds.freqs[1], max_range, args.residual_gate).depth


def cmd_reconstruct(args) -> int:
    ds = Dataset(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ids = ds.ids(args.split)
    if not ids:
        raise CliError(f"split {args.split!r} is empty")
    depths = _pmap(lambda fid: _reconstruct_frame(ds, fid, args), ids)
    rows, preds, gts = [], [], []
    clip = tuple(args.range_clip) if args.range_clip else None
    for fid, depth in zip(ids, depths):
        (out / f"depth_{fid}.pfm").write_bytes(encode_raster(depth, "PFM"))
        gt = ds.load(fid).gt_tof
        rep = compute_metrics(depth, gt, clip)
        rows.append({"frame": fid, **rep.as_row()})
        mask = _eval_mask(gt.data[0], clip)
        preds.append(depth.data[0][mask])
        gts.append(gt.data[0][mask])
    pooled = metrics_from_pairs(np.concatenate(preds), np.concatenate(gts))
    rows.append({"frame": "all", **pooled.as_row()})
    _write_csv(out / "metrics.csv", ("frame",) + METRIC_COLUMNS + ("n_valid",), rows)
    (out / "reconstruction.json").write_text(
        json.dumps({"method": args.method, "split": args.split, "frames": ids}, indent=2, sort_keys=True) + "\n"
    )
    print(format_table([rows[-1]], ["frame", *METRIC_COLUMNS]))
    return EXIT_OK


def _eval_mask(gt: np.ndarray, clip) -> np.ndarray:
    g = np.asarray(gt, dtype=np.float64)
    mask = np.isfinite(g) & (g > 0)
    if clip is not None:
        mask &= (g >= clip[0]) & (g <= clip[1])
    return mask


# -- train ---------------------------------------------------------------------------------------


def sidecar_path(ckpt: Path) -> Path:
    return ckpt.with_suffix(".json")


def loss_csv_path(ckpt: Path) -> Path:
    return ckpt.with_suffix(".loss.csv")


def warp_context(calibration) -> WarpContext:
    # RGB inputs are resampled to the ToF intrinsics before entering the network
    return WarpContext(calibration.tof, calibration.tof, calibration.tof_to_rgb)


def net_config_for(ds: Dataset, placement: str, kind: str, lambda_s: float, seed: int) -> FusionNetConfig:
    gen = ds.manifest.get("generator") or {}
    d_max = float(gen.get("depth_range", [1.0, 15.0])[1])
    return FusionNetConfig(
        height=ds.height,
        width=ds.width,
        placement=placement,
        kind=kind,
        lambda_s=lambda_s,
        d_max=d_max,
        tof_input_scale=10.0 / float(ds.manifest.get("source_amplitude", 2000.0)),
        seed=seed,
    )


def save_model(path: Path, net: FusionNet, state: OptimizerState | None, calibration, train_doc: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(save_checkpoint(net.named_parameters(), state))
    doc = {"config": net.config.to_dict(), "calibration": calibration.to_dict(), "train": train_doc}
    sidecar_path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_model(path: str | Path):
    path = Path(path)
    try:
        doc = json.loads(sidecar_path(path).read_text())
        blob = path.read_bytes()
    except FileNotFoundError as exc:
        raise CliError(f"checkpoint file missing: {exc.filename}") from exc
    net = FusionNet(FusionNetConfig.from_dict(doc["config"]))
    load_checkpoint(blob, net.named_parameters())
    calibration = load_calibration(json.dumps(doc["calibration"]))
    return net, calibration, doc


def train_variant(ds: Dataset, placement: str, kind: str, args, out: Path) -> int:
    ids = ds.ids("train")
    if not ids:
        raise CliError("train split is empty")
    if args.overfit:
        ids = ids[:1]
    batch = network_batch(ds, ids)
    net = FusionNet(net_config_for(ds, placement, kind, args.lambda_s, args.seed))
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
        augment=not args.no_augment,
        lambda_s=args.lambda_s,
        max_steps=args.max_steps,
    )
    result = train(net, batch.tof, batch.rgb, batch.gt_tof, batch.gt_rgb, warp_context(ds.calibration), cfg)
    train_doc = {
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "lr": cfg.lr,
        "seed": cfg.seed,
        "augment": cfg.augment,
        "max_steps": cfg.max_steps,
        "frames": list(ids),
        "steps": result.state.step,
        "status": result.status,
    }
    save_model(out, net, result.state, ds.calibration, train_doc)
    rows = [
        {"step": e.step, "epoch": e.epoch, "loss": e.loss, "l1": e.l1, "smooth": e.smooth, "lr": e.lr}
        for e in result.log
    ]
    _write_csv(loss_csv_path(out), ("step", "epoch", "loss", "l1", "smooth", "lr"), rows)
    if result.status != "ok":
        print(f"training stopped: {result.message}; last good checkpoint saved to {out}", file=sys.stderr)
        return EXIT_NUMERIC
    last = rows[-1] if rows else None
    if last:
        print(f"trained {placement}/{kind}: {result.state.step} steps, final loss {last['loss']:.4f}")
    return EXIT_OK


def cmd_train(args) -> int:
    ds = Dataset(args.dataset)
    return train_variant(ds, args.placement, args.fusion_kind, args, Path(args.out))


# -- eval ----------------------------------------------------------------------------------------


def _pooled(pairs, clip):
    preds, gts = [], []
    for pred, gt in pairs:
        m = _eval_mask(gt, clip)
        preds.append(np.asarray(pred, dtype=np.float64)[m])
        gts.append(np.asarray(gt, dtype=np.float64)[m])
    return metrics_from_pairs(np.concatenate(preds), np.concatenate(gts))


def fusion_label(cfg: FusionNetConfig) -> str:
    return "none" if cfg.placement == "none" else f"{cfg.placement}-{cfg.kind}"


def evaluate_checkpoint(ds: Dataset, ckpt: str | Path, split: str, clip) -> list[dict]:
    net, calibration, _ = load_model(ckpt)
    ids = ds.ids(split)
    if not ids:
        raise CliError(f"split {split!r} is empty")
    if (net.config.height, net.config.width) != (ds.height, ds.width):
        raise CliError("checkpoint input size does not match the dataset")
    batch = network_batch(ds, ids)
    out = predict(net, batch.tof, batch.rgb, warp_context(calibration))
    gts = {"tof": batch.gt_tof, "rgb": batch.gt_rgb}
    rows = []
    for branch in ("tof", "rgb"):
        if branch not in out:
            continue
        rep = _pooled(zip(out[branch][:, 0], gts[branch][:, 0]), clip)
        rows.append(
            {"Backbone": BACKBONE, "Fusion": fusion_label(net.config), "Branch": BRANCH_LABELS[branch], **rep.as_row()}
        )
    return rows


def evaluate_reconstruction(ds: Dataset, recon_dir: Path, split: str, clip) -> list[dict]:
    meta = _read_json(str(recon_dir / "reconstruction.json"))
    pairs = []
    for fid in ds.ids(split):
        path = recon_dir / f"depth_{fid}.pfm"
        if not path.is_file():
            raise CliError(f"missing prediction for frame {fid}: {path}")
        pred = decode_raster(path.read_bytes(), tag="depth_m")
        pairs.append((pred.data[0], ds.load(fid).gt_tof.data[0]))
    if not pairs:
        raise CliError(f"split {split!r} is empty")
    rep = _pooled(pairs, clip)
    return [{"Backbone": "classical", "Fusion": meta.get("method", "unknown"), "Branch": "I-ToF", **rep.as_row()}]


def parse_variant(text: str) -> tuple[str, str]:
    placement, _, kind = text.partition(":")
    kind = kind or "gated"
    if placement not in ("none", "bottleneck", "all") or kind not in ("gated", "attention"):
        raise CliError(f"unknown variant {text!r}")
    return placement, kind


def cmd_eval(args) -> int:
    ds = Dataset(args.dataset)
    clip = tuple(args.range_clip) if args.range_clip else None
    rows: list[dict] = []
    if args.sweep:
        if args.work:
            work = Path(args.work)
        else:
            work = Path(args.out).parent / "sweep" if args.out else Path("sweep")
        variants = args.variants.split(",") if args.variants else list(SWEEP_VARIANTS)
        for text in variants:
            placement, kind = parse_variant(text)
            ckpt = work / f"{placement}_{kind}.tofw"
            code = train_variant(ds, placement, kind, args, ckpt)
            if code != EXIT_OK:
                return code
            rows += evaluate_checkpoint(ds, ckpt, args.split, clip)
    for ckpt in args.checkpoint or []:
        rows += evaluate_checkpoint(ds, ckpt, args.split, clip)
    for recon in args.reconstruction or []:
        rows += evaluate_reconstruction(ds, Path(recon), args.split, clip)
    if not rows:
        raise CliError("nothing to evaluate: pass --checkpoint, --reconstruction or --sweep")
    if args.out:
        _write_csv(Path(args.out), EVAL_COLUMNS, rows)
    print(format_table(rows, list(EVAL_COLUMNS)))
    return EXIT_OK


# -- infer ---------------------------------------------------------------------------------------


def cmd_infer(args) -> int:
    net, calibration, _ = load_model(args.checkpoint)
    if args.calibration:
        calibration = load_calibration(Path(args.calibration).read_bytes())
    frame = decode_raster(Path(args.corr).read_bytes())
    if not isinstance(frame, CorrelationFrame):
        raise CliError(f"{args.corr} is not a 4-channel correlation frame")
    cfg = net.config
    if (frame.raster.height, frame.raster.width) != (cfg.height, cfg.width):
        raise CliError(
            f"shape mismatch: frame is {frame.raster.width}x{frame.raster.height}, "
            f"checkpoint expects {cfg.width}x{cfg.height}"
        )
    rgb = None
    if args.rgb:
        native = decode_raster(Path(args.rgb).read_bytes(), tag="rgb")
        if native.channels != 3:
            raise CliError(f"{args.rgb} is not a 3-channel image")
        rgb = intrinsic_align(native, calibration.rgb, calibration.tof, (cfg.width, cfg.height)).data[None]
    elif cfg.placement != "none":
        raise CliError("a fused checkpoint needs --rgb")
    dt = cfg.np_dtype
    pred = net(frame.data[None].astype(dt), None if rgb is None else rgb.astype(dt), warp_context(calibration))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for branch, scales in pred.items():
        full = ops.resize_bilinear(scales[min(scales)], (cfg.height, cfg.width)).data[0]
        (out / f"depth_{branch}.pfm").write_bytes(encode_raster(Raster(full, "depth_m"), "PFM"))
        if args.intermediates:
            for s, t in scales.items():
                (out / f"depth_{branch}_s{s}.pfm").write_bytes(encode_raster(Raster(t.data[0], "depth_m"), "PFM"))
    print(f"wrote {', '.join(sorted(p.name for p in out.glob('depth_*.pfm')))} to {out}")
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------------------------


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--lambda-s", type=float, default=1.0)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--overfit", action="store_true", help="train on the first training frame only")
    p.add_argument("--no-augment", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tofu", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a dataset directory")
    p.add_argument("--scene", help="JSON scene document or generator config")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--shot-scale", type=float, default=0.0)
    p.add_argument("--ambient-dc", type=float, default=0.0)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--quantize8", action="store_true")
    p.add_argument("--freq-hz", type=float, action="append", help="repeat for multi-frequency frames")
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", help="classical phase-to-depth reconstruction")
    p.add_argument("dataset")
    p.add_argument("--method", choices=("wrapped", "fixed-n", "dual-freq"), required=True)
    p.add_argument("--n", type=int, default=0, help="wrap count for fixed-n")
    p.add_argument("--oracle-n", action="store_true", help="fixed-n with the per-pixel wrap count taken from GT")
    p.add_argument("--max-range", type=float, default=None)
    p.add_argument("--residual-gate", type=float, default=0.25)
    p.add_argument("--split", default="all")
    p.add_argument("--range-clip", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("train", help="train the fusion network")
    p.add_argument("dataset")
    p.add_argument("--placement", choices=("none", "bottleneck", "all"), default="bottleneck")
    p.add_argument("--fusion-kind", choices=("gated", "attention"), default="gated")
    _add_train_flags(p)
    p.add_argument("--out", required=True, help="checkpoint path (.tofw)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics table for checkpoints, reconstructions or a sweep")
    p.add_argument("dataset")
    p.add_argument("--checkpoint", action="append")
    p.add_argument("--reconstruction", action="append")
    p.add_argument("--sweep", action="store_true", help="train and evaluate every placement/kind variant")
    p.add_argument("--variants", help="comma list such as none,bottleneck:gated (default: all five)")
    p.add_argument("--work", help="directory for sweep checkpoints")
    p.add_argument("--split", default="val")
    p.add_argument("--range-clip", type=float, nargs=2, metavar=("LO", "HI"))
    _add_train_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="depth maps for one frame")
    p.add_argument("checkpoint")
    p.add_argument("--corr", required=True, help="correlation frame (.tofc)")
    p.add_argument("--rgb", help="RGB image in the native RGB camera (.pfm)")
    p.add_argument("--calibration", help="override the calibration stored with the checkpoint")
    p.add_argument("--intermediates", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NonFiniteError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CliError, DatasetError, CheckpointError, RasterError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
