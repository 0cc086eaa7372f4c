"""Tensor with a reverse-mode tape. Every op in :mod:`tofu.nn.ops` records its own backward rule."""

from __future__ import annotations

import numpy as np


class NonFiniteError(FloatingPointError):
    """A forward value or gradient became NaN or infinite."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op", "name")

    def __init__(self, data, requires_grad=False, *, parents=(), backward_fn=None, op="leaf", name=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape}, dtype={self.data.dtype}, op={self.op})"

    # operator sugar, resolved lazily to avoid an import cycle
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)


def parameter(data, name=None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def make(data: np.ndarray, parents: tuple, backward_fn, op: str) -> Tensor:
    """Wrap an op result. Non-finite outputs are a hard failure."""
    if not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite output from {op}")
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, needs, parents=parents, backward_fn=backward_fn if needs else None, op=op)


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor, grad: np.ndarray | None = None):
    """Accumulate d(root)/d(node) into ``.grad`` of every node that requires grad."""
    if not root.requires_grad:
        raise ValueError("backward() on a tensor that does not require grad")
    if grad is None:
        if root.data.size != 1:
            raise ValueError("backward() without a seed needs a scalar")
        grad = np.ones_like(root.data)
    order = _topological(root)
    grads = {id(root): np.asarray(grad, dtype=root.data.dtype)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        parent_grads = node.backward_fn(g)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if not np.isfinite(pg).all():
                raise NonFiniteError(f"non-finite gradient flowing out of {node.op}")
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg


def ancestors(root: Tensor) -> set[int]:
    """ids of every tensor reachable through ``parents`` (regardless of requires_grad)."""
    seen, stack = set(), [root]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.extend(node.parents)
    return seen
