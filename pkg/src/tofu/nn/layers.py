"""Parameter containers: a tiny Module base class, convolution and the two fusion blocks."""

from __future__ import annotations

import math

import numpy as np

from . import ops
from .tensor import Tensor, parameter


class Module:
    """Attribute-registered parameters and submodules, named by dotted path."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, key, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[key] = value
        elif isinstance(value, Module):
            self._children[key] = value
        object.__setattr__(self, key, value)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for k, p in self._params.items():
            out[prefix + k] = p
        for k, child in self._children.items():
            out.update(child.named_parameters(f"{prefix}{k}."))
        return out

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.grad = None


class ModuleList(Module):
    def __init__(self, items=()):
        super().__init__()
        self._items = []
        for m in items:
            self.append(m)

    def append(self, m: Module):
        setattr(self, str(len(self._items)), m)
        self._items.append(m)

    def __iter__(self):
        return iter(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def __len__(self):
        return len(self._items)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int = 3, stride: int = 1, *, rng, dtype=np.float32, gain=2.0):
        super().__init__()
        if c_in <= 0 or c_out <= 0:
            raise ValueError("channel counts must be positive")
        self.stride = stride
        std = math.sqrt(gain / (c_in * k * k))
        self.weight = parameter(rng.normal(0.0, std, size=(c_out, c_in, k, k)).astype(dtype))
        self.bias = parameter(np.zeros(c_out, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride)


class FusionModule(Module):
    """Gated cross-modal merge: convert A, score it against B, add the gated result to B.

    ``A~ = relu(conv3x3(A))``, ``m = relu(conv3x3([A~, B]))``, ``w = sigmoid(conv1x1(m))``,
    output ``B + w * A~``.
    """

    def __init__(self, channels: int, *, rng, dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.convert = Conv2d(channels, channels, 3, rng=rng, dtype=dtype)
        self.mix = Conv2d(2 * channels, channels, 3, rng=rng, dtype=dtype)
        self.gate = Conv2d(channels, channels, 1, rng=rng, dtype=dtype, gain=1.0)
        self.last_gate: np.ndarray | None = None

    def __call__(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ValueError(f"fusion inputs differ in shape: {a.shape} vs {b.shape}")
        converted = ops.relu(self.convert(a))
        mixed = ops.relu(self.mix(ops.concat([converted, b])))
        w = ops.sigmoid(self.gate(mixed))
        self.last_gate = w.data
        return ops.add(b, ops.mul(w, converted))


class TokenCapError(ValueError):
    pass


class AttentionFusion(Module):
    """Cross-modal dot-product attention: queries from B, keys and values from A."""

    def __init__(self, channels: int, *, rng, dtype=np.float32, token_cap: int = 256):
        super().__init__()
        self.channels = channels
        self.token_cap = token_cap
        self.query = Conv2d(channels, channels, 1, rng=rng, dtype=dtype, gain=1.0)
        self.key = Conv2d(channels, channels, 1, rng=rng, dtype=dtype, gain=1.0)
        self.value = Conv2d(channels, channels, 1, rng=rng, dtype=dtype, gain=1.0)
        self.last_weights: np.ndarray | None = None

    def __call__(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ValueError(f"attention inputs differ in shape: {a.shape} vs {b.shape}")
        n, c, h, w = b.shape
        if h * w > self.token_cap:
            raise TokenCapError(f"{h * w} tokens exceed the attention cap of {self.token_cap}")
        q = ops.transpose(ops.reshape(self.query(b), (n, c, h * w)), (0, 2, 1))
        k = ops.reshape(self.key(a), (n, c, h * w))
        v = ops.transpose(ops.reshape(self.value(a), (n, c, h * w)), (0, 2, 1))
        scores = ops.mul(ops.matmul(q, k), 1.0 / math.sqrt(c))
        weights = ops.softmax(scores, axis=-1)
        self.last_weights = weights.data
        mixed = ops.reshape(ops.transpose(ops.matmul(weights, v), (0, 2, 1)), (n, c, h, w))
        return ops.add(b, mixed)
