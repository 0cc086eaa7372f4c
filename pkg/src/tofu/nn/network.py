"""Two-branch encoder-decoder depth network with bottleneck and decoder-stage fusion."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..core import Extrinsics, Intrinsics
from ..geometry import bilinear_taps, depth_warp_field
from . import ops
from .layers import AttentionFusion, Conv2d, FusionModule, Module, ModuleList
from .tensor import Tensor

PLACEMENTS = ("none", "bottleneck", "all")
KINDS = ("gated", "attention")
ENCODER_SCALES = (2, 4, 8, 16, 32)
DECODER_SCALES = (16, 8, 4, 2, 1)
WARP_SCALES = (8, 4, 2)  # decoder fusion at 1/16->1/8, 1/8->1/4, 1/4->1/2


@dataclass(frozen=True)
class FusionNetConfig:
    height: int = 64
    width: int = 64
    enc_widths: tuple[int, ...] = (8, 16, 32, 64, 64)
    dec_widths: tuple[int, ...] = (32, 16, 16, 8, 8)  # scales 1/16, 1/8, 1/4, 1/2, 1/1
    placement: str = "bottleneck"
    kind: str = "gated"
    scales: tuple[int, ...] = (8, 4, 2, 1)
    d_min: float = 0.5
    d_max: float = 15.0
    lambda_s: float = 1.0
    tof_input_scale: float = 0.005
    token_cap: int = 256
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        if self.placement not in PLACEMENTS:
            raise ValueError(f"placement must be one of {PLACEMENTS}")
        if self.kind not in KINDS:
            raise ValueError(f"fusion kind must be one of {KINDS}")
        if len(self.enc_widths) != 5 or len(self.dec_widths) != 5:
            raise ValueError("need five encoder and five decoder widths")
        if min(self.enc_widths) <= 0 or min(self.dec_widths) <= 0:
            raise ValueError("widths must be positive")
        if self.height % 32 or self.width % 32:
            raise ValueError("input size must be divisible by 32")
        if not set(self.scales) <= set(DECODER_SCALES):
            raise ValueError(f"output scales must be drawn from {DECODER_SCALES}")
        if not 0 < self.d_min < self.d_max:
            raise ValueError("need 0 < d_min < d_max")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def rgb_scales(self) -> tuple[int, ...]:
        """RGB-branch output scales; decoder warping also needs depth at 1/16, 1/8 and 1/4."""
        wanted = set(self.scales)
        if self.placement == "all":
            wanted |= {2 * s for s in WARP_SCALES}
        return tuple(s for s in DECODER_SCALES if s in wanted)

    def tof_scales(self) -> tuple[int, ...]:
        return tuple(s for s in DECODER_SCALES if s in self.scales)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "FusionNetConfig":
        doc = dict(doc)
        for key in ("enc_widths", "dec_widths", "scales"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)


@dataclass(frozen=True)
class WarpContext:
    """Intrinsics of the (aligned) ToF and RGB input tensors at full resolution plus extrinsics."""

    K_tof: Intrinsics
    K_rgb: Intrinsics
    tof_to_rgb: Extrinsics = field(default_factory=Extrinsics.identity)


def warp_matrices(depth: np.ndarray, ctx: WarpContext, scale: int, src_hw: tuple[int, int]) -> np.ndarray:
    """Dense per-sample resampling matrices pulling ToF features into the RGB view.

    ``depth`` is the RGB-view depth (N, 1, h, w) at 1/scale. Invalid samples get all-zero rows.
    """
    n, _, h, w = depth.shape
    sh, sw = src_hw
    K_dst = ctx.K_rgb.scaled(scale)
    K_src = ctx.K_tof.scaled(scale)
    pose = ctx.tof_to_rgb.inverse()
    mats = np.zeros((n, h * w, sh * sw))
    rows = np.arange(h * w)
    for i in range(n):
        field_ = depth_warp_field(depth[i, 0], K_src, K_dst, pose)
        taps = bilinear_taps(field_.xs, field_.ys, sh, sw)
        keep = taps.inside & field_.valid.ravel()
        for k in range(4):
            np.add.at(mats[i], (rows, taps.index[k]), taps.weight[k] * keep)
    return mats


class Encoder(Module):
    def __init__(self, c_in: int, widths, *, rng, dtype):
        super().__init__()
        self.down = ModuleList()
        self.refine = ModuleList()
        prev = c_in
        for w in widths:
            self.down.append(Conv2d(prev, w, 3, 2, rng=rng, dtype=dtype))
            self.refine.append(Conv2d(w, w, 3, 1, rng=rng, dtype=dtype))
            prev = w

    def __call__(self, x: Tensor) -> list[Tensor]:
        feats = []
        for down, refine in zip(self.down, self.refine):
            x = ops.relu(refine(ops.relu(down(x))))
            feats.append(x)
        return feats


class DepthHead(Module):
    def __init__(self, c_in: int, d_min: float, d_max: float, *, rng, dtype):
        super().__init__()
        self.conv = Conv2d(c_in, 1, 3, rng=rng, dtype=dtype, gain=0.1)
        self.d_min = d_min
        self.d_max = d_max

    def __call__(self, x: Tensor) -> Tensor:
        return ops.affine(ops.sigmoid(self.conv(x)), self.d_max - self.d_min, self.d_min)


class Decoder(Module):
    """Per stage: upsample x2, conv3x3, concat encoder skip, conv3x3; optional depth head."""

    def __init__(self, enc_widths, dec_widths, head_scales, d_min, d_max, *, rng, dtype):
        super().__init__()
        self.up = ModuleList()
        self.merge = ModuleList()
        self.heads = {}
        self.head_list = ModuleList()
        prev = enc_widths[-1]
        for s, w in zip(DECODER_SCALES, dec_widths):
            skip = enc_widths[ENCODER_SCALES.index(s)] if s in ENCODER_SCALES else 0
            self.up.append(Conv2d(prev, w, 3, rng=rng, dtype=dtype))
            self.merge.append(Conv2d(w + skip, w, 3, rng=rng, dtype=dtype))
            if s in head_scales:
                head = DepthHead(w, d_min, d_max, rng=rng, dtype=dtype)
                self.head_list.append(head)
                self.heads[s] = head
            prev = w

    def upsample(self, stage: int, x: Tensor) -> Tensor:
        h, w = x.shape[-2:]
        return ops.relu(self.up[stage](ops.resize_bilinear(x, (2 * h, 2 * w))))

    def merge_skip(self, stage: int, x: Tensor, skips: list[Tensor]) -> Tensor:
        s = DECODER_SCALES[stage]
        if s in ENCODER_SCALES:
            x = ops.concat([x, skips[ENCODER_SCALES.index(s)]])
        return ops.relu(self.merge[stage](x))


class FusionNet(Module):
    def __init__(self, config: FusionNetConfig):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(config.seed)
        dt = config.np_dtype
        ew, dw = config.enc_widths, config.dec_widths
        self.tof_encoder = Encoder(4, ew, rng=rng, dtype=dt)
        self.rgb_encoder = Encoder(3, ew, rng=rng, dtype=dt)
        self.tof_decoder = Decoder(ew, dw, config.tof_scales(), config.d_min, config.d_max, rng=rng, dtype=dt)
        self.rgb_decoder = Decoder(ew, dw, config.rgb_scales(), config.d_min, config.d_max, rng=rng, dtype=dt)
        if config.placement != "none":
            block = AttentionFusion if config.kind == "attention" else FusionModule
            extra = {"token_cap": config.token_cap} if config.kind == "attention" else {}
            self.fuse_into_tof = block(ew[-1], rng=rng, dtype=dt, **extra)
            self.fuse_into_rgb = block(ew[-1], rng=rng, dtype=dt, **extra)
        # warp matrices of the latest forward pass; ``frozen_warps`` (if set) is reused instead
        self.last_warps: dict[int, np.ndarray] = {}
        self.frozen_warps: dict[int, np.ndarray] | None = None
        if config.placement == "all":
            self.decoder_fusion = ModuleList(
                FusionModule(dw[DECODER_SCALES.index(s)], rng=rng, dtype=dt) for s in WARP_SCALES
            )

    def _check_input(self, x: Tensor, channels: int, what: str):
        n, c, h, w = x.shape
        if c != channels:
            raise ValueError(f"{what} input needs {channels} channels, got {c}")
        if h % 32 or w % 32:
            raise ValueError(f"{what} input size {h}x{w} is not divisible by 32")
        if (h, w) != (self.config.height, self.config.width):
            raise ValueError(f"{what} input {h}x{w} does not match the configured size")

    def __call__(self, tof, rgb=None, context: WarpContext | None = None) -> dict[str, dict[int, Tensor]]:
        """Depth predictions ``{"tof": {scale: (N,1,H/s,W/s)}, "rgb": {...}}``.

        ``tof`` holds raw correlations (N,4,H,W); ``rgb`` is intrinsically aligned (N,3,H,W) in [0,1].
        Without fusion the RGB input may be omitted, in which case only ToF outputs are returned.
        """
        cfg = self.config
        dt = cfg.np_dtype
        tof = tof if isinstance(tof, Tensor) else Tensor(np.asarray(tof, dtype=dt))
        self._check_input(tof, 4, "ToF")
        tof_in = ops.mul(tof, cfg.tof_input_scale)
        t_feats = self.tof_encoder(tof_in)
        if rgb is None:
            if cfg.placement != "none":
                raise ValueError("fused configurations need an RGB input")
            return {"tof": self._decode_single(self.tof_decoder, t_feats, t_feats[-1])}
        rgb = rgb if isinstance(rgb, Tensor) else Tensor(np.asarray(rgb, dtype=dt))
        self._check_input(rgb, 3, "RGB")
        if cfg.placement == "all" and context is None:
            raise ValueError("all-resolution fusion needs a warp context")
        r_feats = self.rgb_encoder(ops.affine(rgb, 4.0, -2.0))
        bt, br = t_feats[-1], r_feats[-1]
        if cfg.placement != "none":
            bt, br = self.fuse_into_tof(br, bt), self.fuse_into_rgb(t_feats[-1], br)
        if cfg.placement != "all":
            return {
                "tof": self._decode_single(self.tof_decoder, t_feats, bt),
                "rgb": self._decode_single(self.rgb_decoder, r_feats, br),
            }
        return self._decode_fused(t_feats, r_feats, bt, br, context)

    def _decode_single(self, dec: Decoder, feats, x) -> dict[int, Tensor]:
        outs = {}
        for stage, s in enumerate(DECODER_SCALES):
            x = dec.merge_skip(stage, dec.upsample(stage, x), feats)
            if s in dec.heads:
                outs[s] = dec.heads[s](x)
        return outs

    def _decode_fused(self, t_feats, r_feats, xt, xr, ctx: WarpContext):
        td, rd = self.tof_decoder, self.rgb_decoder
        t_out, r_out = {}, {}
        for stage, s in enumerate(DECODER_SCALES):
            xt = td.upsample(stage, xt)
            xr = rd.upsample(stage, xr)
            if s in WARP_SCALES:
                h, w = xr.shape[-2:]
                # warp coordinates come from detached RGB-branch depth one scale coarser
                if self.frozen_warps is not None:
                    mats = self.frozen_warps[s]
                else:
                    coarse = r_out[2 * s].data
                    depth = ops.resize_bilinear(Tensor(coarse), (h, w)).data
                    mats = warp_matrices(depth, ctx, s, xt.shape[-2:])
                self.last_warps[s] = mats
                warped = ops.sample_with_matrix(xt, mats, (h, w))
                xr = self.decoder_fusion[WARP_SCALES.index(s)](warped, xr)
            xt = td.merge_skip(stage, xt, t_feats)
            xr = rd.merge_skip(stage, xr, r_feats)
            if s in td.heads:
                t_out[s] = td.heads[s](xt)
            if s in rd.heads:
                r_out[s] = rd.heads[s](xr)
        return {"tof": t_out, "rgb": r_out}

    def freeze_warps(self):
        """Reuse the latest warp matrices in later forward passes (differentiation with fixed coordinates)."""
        self.frozen_warps = dict(self.last_warps)

    def unfreeze_warps(self):
        self.frozen_warps = None

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.named_parameters().values())
