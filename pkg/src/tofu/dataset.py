"""On-disk synthetic corpus: correlation frames, RGB images and per-viewpoint ground truth.

Layout of a dataset directory::

    manifest.json         frame ids, split tags, frequencies, generator and noise settings
    calibration.json      ToF/RGB intrinsics and the ToF->RGB extrinsics
    corr_XXXX.tofc        correlations at the first modulation frequency
    corr_XXXX_fK.tofc     correlations at frequency index K >= 1 (multi-frequency corpora)
    rgb_XXXX.pfm          RGB image in the native RGB camera
    gt_rgb_XXXX.pfm       z-depth in the native RGB camera
    gt_tof_XXXX.pfm       RGB-view depth forward-splatted into the ToF camera
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Calibration, CorrelationFrame, Raster, decode_raster, encode_raster, load_calibration
from .geometry import forward_splat_depth, intrinsic_align
from .sensor import EmitterConfig, NoiseConfig, SceneGenerator, apply_noise, render_scene, simulate_correlations
from .sensor.scene import SceneSpec

MANIFEST = "manifest.json"
CALIBRATION = "calibration.json"
MANIFEST_VERSION = 1


class DatasetError(ValueError):
    pass


def frame_id(i: int) -> str:
    return f"{i:04d}"


def corr_name(fid: str, k: int = 0) -> str:
    return f"corr_{fid}.tofc" if k == 0 else f"corr_{fid}_f{k}.tofc"


def split_tags(count: int, val_fraction: float = 0.2) -> list[str]:
    """The last ``round(count * val_fraction)`` frames (at least one when count > 1) are validation."""
    n_val = int(round(count * val_fraction))
    if count > 1:
        n_val = min(max(n_val, 1), count - 1)
    else:
        n_val = 0
    return ["train"] * (count - n_val) + ["val"] * n_val


def _frame_seed(seed: int, index: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, index, stream]).generate_state(1)[0])


def ground_truth_tof(depth_rgb: Raster, calibration: Calibration) -> Raster:
    """RGB-view depth moved into the ToF camera by z-buffered forward splatting."""
    size = (depth_rgb.width, depth_rgb.height)
    return forward_splat_depth(depth_rgb, calibration.rgb, calibration.tof, calibration.tof_to_rgb.inverse(), size)


@dataclass(frozen=True)
class FrameRecord:
    fid: str
    correlations: tuple[CorrelationFrame, ...]
    rgb: Raster
    gt_rgb: Raster
    gt_tof: Raster


def render_frame(
    spec: SceneSpec,
    emitter: EmitterConfig,
    freqs: list[float],
    noise: NoiseConfig,
    noise_seeds: list[int],
) -> tuple[list[CorrelationFrame], Raster, Raster, Raster]:
    depth_tof, albedo, depth_rgb, rgb = render_scene(spec, emitter)
    frames = []
    for f, s in zip(freqs, noise_seeds):
        em = EmitterConfig(f, emitter.source_amplitude)
        clean = simulate_correlations(depth_tof, albedo, em)
        cfg = NoiseConfig(
            noise.read_sigma, noise.shot_scale, noise.ambient_dc, noise.dropout_prob, noise.quantize_8bit, s,
            noise.quantize_range,
        )
        frames.append(apply_noise(clean, cfg, source_amplitude=em.source_amplitude))
    gt_tof = ground_truth_tof(depth_rgb, spec.calibration)
    return frames, rgb, depth_rgb, gt_tof


def write_dataset(
    out: str | Path,
    *,
    count: int,
    seed: int,
    generator: SceneGenerator | None = None,
    scene: SceneSpec | None = None,
    noise: NoiseConfig | None = None,
    freqs: list[float] | None = None,
    val_fraction: float = 0.2,
    workers: int = 1,
) -> Path:
    """Synthesize ``count`` frames. Either a random ``generator`` or one fixed ``scene`` is used."""
    if count <= 0:
        raise DatasetError("count must be positive")
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create output directory {out}: {exc}") from exc
    if generator is None and scene is None:
        generator = SceneGenerator.from_config()
    noise = noise or NoiseConfig()
    if generator is not None:
        em_doc = generator.params["emitter"]
        emitter = EmitterConfig(float(em_doc["mod_freq_hz"]), float(em_doc["source_amplitude"]))
        calibration = generator.calibration
    else:
        emitter = EmitterConfig()
        calibration = scene.calibration
    freqs = [float(f) for f in (freqs or [emitter.mod_freq_hz])]
    if len(set(freqs)) != len(freqs):
        raise DatasetError("modulation frequencies must be distinct")
    tags = split_tags(count, val_fraction)

    def job(i: int):
        if generator is not None:
            rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
            spec = generator.sample(rng)
        else:
            spec = scene
        seeds = [_frame_seed(seed, i, k) for k in range(len(freqs))]
        frames, rgb, depth_rgb, gt_tof = render_frame(spec, emitter, freqs, noise, seeds)
        fid = frame_id(i)
        for k, fr in enumerate(frames):
            (out / corr_name(fid, k)).write_bytes(encode_raster(fr, "TOFC"))
        (out / f"rgb_{fid}.pfm").write_bytes(encode_raster(rgb, "PFM"))
        (out / f"gt_rgb_{fid}.pfm").write_bytes(encode_raster(depth_rgb, "PFM"))
        (out / f"gt_tof_{fid}.pfm").write_bytes(encode_raster(gt_tof, "PFM"))
        return fid

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            ids = list(pool.map(job, range(count)))
    else:
        ids = [job(i) for i in range(count)]

    width = generator.params["width"] if generator is not None else scene.width
    height = generator.params["height"] if generator is not None else scene.height
    manifest = {
        "version": MANIFEST_VERSION,
        "width": int(width),
        "height": int(height),
        "frequencies_hz": freqs,
        "source_amplitude": emitter.source_amplitude,
        "seed": int(seed),
        "noise": {
            "read_sigma": noise.read_sigma,
            "shot_scale": noise.shot_scale,
            "ambient_dc": noise.ambient_dc,
            "dropout_prob": noise.dropout_prob,
            "quantize_8bit": noise.quantize_8bit,
        },
        "generator": generator.params if generator is not None else None,
        "frames": [{"id": fid, "split": tag} for fid, tag in zip(ids, tags)],
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (out / CALIBRATION).write_bytes(calibration.to_json())
    return out


class Dataset:
    """Read access to a directory produced by :func:`write_dataset`."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        try:
            self.manifest = json.loads((self.root / MANIFEST).read_text())
            self.calibration = load_calibration((self.root / CALIBRATION).read_bytes())
        except FileNotFoundError as exc:
            raise DatasetError(f"not a dataset directory: {exc.filename} is missing") from exc
        except json.JSONDecodeError as exc:
            raise DatasetError(f"corrupt manifest: {exc}") from exc
        self.freqs = [float(f) for f in self.manifest["frequencies_hz"]]
        self.width = int(self.manifest["width"])
        self.height = int(self.manifest["height"])
        for entry in self.manifest["frames"]:
            for name in self._files(entry["id"]):
                if not (self.root / name).is_file():
                    raise DatasetError(f"frame {entry['id']}: missing {name}")

    def _files(self, fid: str) -> list[str]:
        corr = [corr_name(fid, k) for k in range(len(self.freqs))]
        return corr + [f"rgb_{fid}.pfm", f"gt_rgb_{fid}.pfm", f"gt_tof_{fid}.pfm"]

    def ids(self, split: str | None = None) -> list[str]:
        return [e["id"] for e in self.manifest["frames"] if split in (None, "all", e["split"])]

    def load(self, fid: str) -> FrameRecord:
        corr = []
        for k in range(len(self.freqs)):
            fr = decode_raster((self.root / corr_name(fid, k)).read_bytes())
            if not isinstance(fr, CorrelationFrame):
                raise DatasetError(f"{corr_name(fid, k)} is not a correlation frame")
            corr.append(fr)
        rgb = decode_raster((self.root / f"rgb_{fid}.pfm").read_bytes(), tag="rgb")
        gt_rgb = decode_raster((self.root / f"gt_rgb_{fid}.pfm").read_bytes(), tag="depth_m")
        gt_tof = decode_raster((self.root / f"gt_tof_{fid}.pfm").read_bytes(), tag="depth_m")
        for r in (rgb, gt_rgb, gt_tof, *(c.raster for c in corr)):
            if (r.width, r.height) != (self.width, self.height):
                raise DatasetError(f"frame {fid}: raster size {r.width}x{r.height} differs from the manifest")
        return FrameRecord(fid, tuple(corr), rgb, gt_rgb, gt_tof)


@dataclass(frozen=True)
class NetworkBatch:
    """Stacked, intrinsically aligned network inputs and targets for a list of frames."""

    ids: tuple[str, ...]
    tof: np.ndarray  # (N, 4, H, W) raw correlations at the first frequency
    rgb: np.ndarray  # (N, 3, H, W) RGB resampled to the ToF intrinsics
    gt_tof: np.ndarray  # (N, 1, H, W)
    gt_rgb: np.ndarray  # (N, 1, H, W) RGB-view depth resampled to the ToF intrinsics


def aligned_inputs(record: FrameRecord, calibration: Calibration):
    """Resample the RGB image and its depth to the ToF intrinsics (parallax remains)."""
    rgb = intrinsic_align(record.rgb, calibration.rgb, calibration.tof)
    gt_rgb = intrinsic_align(record.gt_rgb, calibration.rgb, calibration.tof)
    return rgb, gt_rgb


def network_batch(ds: Dataset, ids: list[str]) -> NetworkBatch:
    tof, rgb, gt_tof, gt_rgb = [], [], [], []
    for fid in ids:
        rec = ds.load(fid)
        a_rgb, a_gt = aligned_inputs(rec, ds.calibration)
        tof.append(rec.correlations[0].data)
        rgb.append(a_rgb.data)
        gt_tof.append(rec.gt_tof.data)
        gt_rgb.append(a_gt.data)
    return NetworkBatch(tuple(ids), np.stack(tof), np.stack(rgb), np.stack(gt_tof), np.stack(gt_rgb))
