"""Adam with a step-decayed learning rate."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NonFiniteError, Tensor

BASE_LR = 1e-4
DECAY = 0.95
DECAY_INTERVAL = 1000


@dataclass
class OptimizerState:
    base_lr: float = BASE_LR
    decay: float = DECAY
    decay_interval: int = DECAY_INTERVAL
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def lr(self, t: int | None = None) -> float:
        """Learning rate used for (0-based) step ``t``."""
        t = self.step if t is None else t
        return self.base_lr * self.decay ** (t // self.decay_interval)


def adam_step(params: dict[str, Tensor], state: OptimizerState) -> float:
    """Update ``params`` in place from their ``.grad``; returns the learning rate that was used.

    Parameters without a gradient are treated as having a zero gradient.
    """
    for name, p in params.items():
        if p.grad is not None:
            if p.grad.shape != p.data.shape:
                raise ValueError(f"gradient shape {p.grad.shape} != parameter shape {p.data.shape} for {name}")
            if not np.isfinite(p.grad).all():
                raise NonFiniteError(f"non-finite gradient for parameter {name} at step {state.step}")
    lr = state.lr()
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[name] = m.astype(p.dtype)
        state.v[name] = v.astype(p.dtype)
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.dtype)
    state.step = t
    return lr
