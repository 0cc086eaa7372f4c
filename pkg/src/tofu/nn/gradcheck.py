"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import Tensor, backward

DEFAULT_STEP = 1e-6


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    worst_name: str | None
    worst_index: tuple | None
    analytic: float
    numeric: float
    n_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def __str__(self):
        verdict = "ok" if self.passed else "FAILED"
        return (
            f"grad check {verdict}: max rel err {self.max_rel_error:.3e} (tol {self.tolerance:.1e}) over "
            f"{self.n_checked} coords; worst {self.worst_name}{list(self.worst_index or ())} "
            f"analytic={self.analytic:.6e} numeric={self.numeric:.6e}"
        )


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor) where the floor is 1e-3 of the largest numeric magnitude.

    The floor keeps coordinates whose true derivative is ~0 from dominating through round-off.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    floor = 1e-3 * float(np.max(np.abs(numeric), initial=0.0)) + 1e-12
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def _sample(shape, k, rng) -> list[tuple]:
    size = int(np.prod(shape))
    flat = rng.choice(size, size=min(k, size), replace=False) if k < size else np.arange(size)
    return [np.unravel_index(int(i), shape) for i in np.sort(flat)]


def grad_check(
    objective: Callable[[], Tensor],
    inputs: dict[str, Tensor],
    *,
    tolerance: float = 1e-5,
    samples: int | float = 20,
    h: float = DEFAULT_STEP,
    seed: int = 0,
    reference: tuple[Callable[[], Tensor], dict[str, Tensor]] | None = None,
) -> GradCheckReport:
    """Compare backprop gradients of ``objective()`` w.r.t. ``inputs`` against central differences.

    ``samples`` is either a count of coordinates per tensor or, if a float in (0, 1), a fraction of
    every tensor's entries (at least one). When ``reference`` = (objective64, inputs64) is given the
    finite differences are taken on that higher-precision copy instead; its inputs must carry the
    same names and shapes.
    """
    rng = np.random.default_rng(seed)
    for t in inputs.values():
        t.grad = None
        t.requires_grad = True
    out = objective()
    backward(out)
    fd_obj, fd_inputs = reference if reference is not None else (objective, inputs)
    names, idxs, ana, num = [], [], [], []
    for name, t in inputs.items():
        k = max(1, int(round(samples * t.data.size))) if isinstance(samples, float) and samples < 1 else int(samples)
        grad = t.grad if t.grad is not None else np.zeros_like(t.data)
        target = fd_inputs[name]
        for idx in _sample(t.shape, k, rng):
            orig = target.data[idx]
            target.data[idx] = orig + h
            fp = float(fd_obj().data)
            target.data[idx] = orig - h
            fm = float(fd_obj().data)
            target.data[idx] = orig
            names.append(name)
            idxs.append(idx)
            ana.append(float(grad[idx]))
            num.append((fp - fm) / (2 * h))
    if not ana:
        return GradCheckReport(0.0, None, None, 0.0, 0.0, 0, tolerance)
    err = relative_error(np.array(ana), np.array(num))
    w = int(np.argmax(err))
    return GradCheckReport(
        max_rel_error=float(err[w]),
        worst_name=names[w],
        worst_index=tuple(int(i) for i in idxs[w]),
        analytic=ana[w],
        numeric=num[w],
        n_checked=len(ana),
        tolerance=tolerance,
    )
