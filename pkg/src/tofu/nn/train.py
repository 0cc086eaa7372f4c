"""Deterministic mini-batch training loop with brightness/contrast jitter."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .loss import loss_total
from .network import FusionNet, WarpContext
from .optim import OptimizerState, adam_step
from .tensor import NonFiniteError, backward

JITTER = (0.9, 1.1)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1
    batch_size: int = 4
    lr: float = 1e-4
    seed: int = 0
    augment: bool = True
    lambda_s: float = 1.0
    max_steps: int | None = None

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch size must be positive")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")


@dataclass
class StepLog:
    step: int
    epoch: int
    loss: float
    l1: float
    smooth: float
    lr: float


@dataclass
class TrainResult:
    log: list[StepLog] = field(default_factory=list)
    state: OptimizerState | None = None
    status: str = "ok"
    message: str = ""


def jitter(rgb: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Per-image brightness and contrast scaling, clipped back to [0, 1]."""
    n = rgb.shape[0]
    brightness = rng.uniform(*JITTER, size=(n, 1, 1, 1))
    contrast = rng.uniform(*JITTER, size=(n, 1, 1, 1))
    mean = rgb.mean(axis=(1, 2, 3), keepdims=True)
    out = (rgb - mean) * contrast + mean * brightness
    return np.clip(out, 0.0, 1.0).astype(rgb.dtype)


def train(
    net: FusionNet,
    tof: np.ndarray,
    rgb: np.ndarray,
    gt_tof: np.ndarray,
    gt_rgb: np.ndarray,
    context: WarpContext | None,
    cfg: TrainConfig,
    state: OptimizerState | None = None,
    on_step=None,
) -> TrainResult:
    """Run ``cfg.epochs`` passes over the frames in a seeded order.

    A non-finite loss or gradient stops training with status ``"nonfinite"``; the parameters are
    left at the last successful update.
    """
    dt = net.config.np_dtype
    n = tof.shape[0]
    rng = np.random.default_rng(cfg.seed)
    state = state or OptimizerState(base_lr=cfg.lr)
    params = net.named_parameters()
    result = TrainResult(state=state)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            if cfg.max_steps is not None and state.step >= cfg.max_steps:
                return result
            idx = np.sort(order[start : start + cfg.batch_size])
            x_rgb = rgb[idx].astype(dt)
            if cfg.augment:
                x_rgb = jitter(x_rgb, rng)
            try:
                net.zero_grad()
                pred = net(tof[idx].astype(dt), x_rgb, context)
                loss = loss_total(pred, gt_tof[idx], gt_rgb[idx], x_rgb, cfg.lambda_s)
                backward(loss.total)
                lr = adam_step(params, state)
            except NonFiniteError as exc:
                result.status = "nonfinite"
                result.message = str(exc)
                return result
            entry = StepLog(state.step - 1, epoch, float(loss.total.data), loss.l1, loss.smooth, lr)
            result.log.append(entry)
            if on_step is not None:
                on_step(entry)
    return result


def predict(net: FusionNet, tof: np.ndarray, rgb: np.ndarray | None, context: WarpContext | None, batch_size: int = 8):
    """Full-resolution depth per branch, (N, 1, H, W) arrays keyed by branch name."""
    dt = net.config.np_dtype
    outs: dict[str, list] = {}
    for start in range(0, tof.shape[0], batch_size):
        sl = slice(start, start + batch_size)
        pred = net(tof[sl].astype(dt), None if rgb is None else rgb[sl].astype(dt), context)
        for branch, scales in pred.items():
            full = ops.resize_bilinear(scales[min(scales)], tof.shape[-2:])
            outs.setdefault(branch, []).append(full.data)
    return {b: np.concatenate(v) for b, v in outs.items()}
