"""Multi-scale masked L1 plus edge-aware smoothness on the RGB branch."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import depth_valid
from . import ops
from .tensor import Tensor


@dataclass
class LossBreakdown:
    total: Tensor
    l1: float
    smooth: float


def _full_res(pred: Tensor, size) -> Tensor:
    return ops.resize_bilinear(pred, size)


def loss_total(
    pred: dict[str, dict[int, Tensor]],
    gt_tof: np.ndarray,
    gt_rgb: np.ndarray | None,
    rgb: np.ndarray | None,
    lambda_s: float = 1.0,
) -> LossBreakdown:
    """``L1 + lambda_s * Ls`` over every predicted scale of both branches.

    Ground truths are (N,1,H,W) depths where 0 (or any non-positive / non-finite value) is invalid.
    Each prediction is upsampled to full resolution before comparison. The smoothness term uses the
    channel mean of ``rgb`` (N,3,H,W) as intensity and only applies to the RGB branch.
    """
    gt_tof = np.asarray(gt_tof)
    size = gt_tof.shape[-2:]
    terms: list[Tensor] = []
    smooth_terms: list[Tensor] = []
    branches = [("tof", gt_tof)]
    if "rgb" in pred:
        if gt_rgb is None:
            raise ValueError("RGB-branch predictions need RGB-viewpoint ground truth")
        branches.append(("rgb", np.asarray(gt_rgb)))
    for branch, gt in branches:
        mask = depth_valid(gt)
        if not mask.any():
            raise ValueError(f"no valid ground-truth pixel for the {branch} branch")
        target = np.where(mask, gt, 0)
        for scale in sorted(pred[branch]):
            up = _full_res(pred[branch][scale], size)
            terms.append(ops.masked_l1(up, target, mask))
            if branch == "rgb" and lambda_s and rgb is not None:
                intensity = np.asarray(rgb).mean(axis=1, keepdims=True)
                smooth_terms.append(ops.edge_aware_smoothness(up, intensity))
    l1 = terms[0]
    for t in terms[1:]:
        l1 = ops.add(l1, t)
    total = l1
    smooth_value = 0.0
    if smooth_terms:
        smooth = smooth_terms[0]
        for t in smooth_terms[1:]:
            smooth = ops.add(smooth, t)
        smooth_value = float(smooth.data)
        total = ops.add(l1, ops.mul(smooth, lambda_s))
    return LossBreakdown(total=total, l1=float(l1.data), smooth=smooth_value)
