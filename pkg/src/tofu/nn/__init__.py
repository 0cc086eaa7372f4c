"""From-scratch differentiable stack and the two-branch RGB/ToF fusion network."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, grad_check, relative_error
from . import ops
from .layers import AttentionFusion, Conv2d, FusionModule, Module, ModuleList, TokenCapError
from .loss import LossBreakdown, loss_total
from .network import FusionNet, FusionNetConfig, WarpContext
from .optim import OptimizerState, adam_step
from .tensor import NonFiniteError, Tensor, ancestors, backward, parameter

__all__ = [
    "AttentionFusion",
    "CheckpointError",
    "Conv2d",
    "FusionModule",
    "FusionNet",
    "FusionNetConfig",
    "GradCheckReport",
    "LossBreakdown",
    "Module",
    "ModuleList",
    "NonFiniteError",
    "OptimizerState",
    "Tensor",
    "TokenCapError",
    "WarpContext",
    "adam_step",
    "ancestors",
    "backward",
    "grad_check",
    "load_checkpoint",
    "loss_total",
    "ops",
    "parameter",
    "relative_error",
    "save_checkpoint",
]
