"""Minimal module system: parameters, convolution layers, state dicts."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .autodiff import Tensor, conv, instance_norm, relu


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    """Container whose Parameter / Module attributes are discovered by traversal.

    Lists and dicts of modules are traversed too, in insertion order, so
    parameter names are stable across runs.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            yield from _walk(value, prefix + name)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state dict mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {value.shape} != model shape {p.shape}")
            p.data = value.astype(p.dtype, copy=True)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def _walk(value, name: str):
    if isinstance(value, Parameter):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")
    elif isinstance(value, dict):
        for key, item in value.items():
            yield from _walk(item, f"{name}.{key}")


class Conv(Module):
    """2-D or 3-D convolution layer; padding defaults to "same" for odd kernels.

    ``init`` is ``"he"`` (uniform, ReLU gain), ``"default"`` (uniform with bound
    ``1/sqrt(fan_in)``) or ``"zero"``.
    """

    def __init__(self, cin: int, cout: int, kernel, stride=1, padding=None, *, bias: bool = True,
                 rng: np.random.Generator, dtype=np.float32, init: str = "he"):
        kernel = tuple(kernel) if not isinstance(kernel, int) else (kernel, kernel)
        n = len(kernel)
        self.stride = (stride,) * n if isinstance(stride, int) else tuple(stride)
        self.padding = tuple(k // 2 for k in kernel) if padding is None else (
            (padding,) * n if isinstance(padding, int) else tuple(padding))
        fan_in = cin * math.prod(kernel)
        shape = (cout, cin) + kernel
        if init == "zero":
            w = np.zeros(shape)
        elif init == "he":
            bound = math.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, shape)
        elif init == "default":
            bound = 1.0 / math.sqrt(fan_in)
            w = rng.uniform(-bound, bound, shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        self.weight = Parameter(w.astype(dtype))
        self.bias = Parameter(np.zeros(cout, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return conv(x, self.weight, self.bias, self.stride, self.padding)


def conv2d_video(cin, cout, k=3, stride=1, **kw) -> Conv:
    """Per-frame 2-D convolution on ``[B, C, T, H, W]`` (a ``(1, k, k)`` 3-D kernel)."""
    return Conv(cin, cout, (1, k, k), (1, stride, stride), (0, k // 2, k // 2), **kw)


def pointwise(cin, cout, **kw) -> Conv:
    return Conv(cin, cout, (1, 1, 1), 1, 0, **kw)


class SepConv3d(Module):
    """``(1, k, k)`` spatial convolution followed by a ``(k, 1, 1)`` temporal one."""

    def __init__(self, cin, cout, k=3, *, rng, dtype=np.float32, init="default"):
        self.spatial = Conv(cin, cout, (1, k, k), rng=rng, dtype=dtype, init=init)
        self.temporal = Conv(cout, cout, (k, 1, 1), rng=rng, dtype=dtype, init=init)

    def __call__(self, x: Tensor) -> Tensor:
        return self.temporal(self.spatial(x))


class ResidualBlock(Module):
    """Two 3x3 per-frame convolutions, each followed by instance normalization."""

    def __init__(self, cin, cout, stride=1, *, rng, dtype=np.float32):
        self.conv1 = conv2d_video(cin, cout, 3, stride, rng=rng, dtype=dtype)
        self.conv2 = conv2d_video(cout, cout, 3, 1, rng=rng, dtype=dtype)
        self.skip = None
        if stride != 1 or cin != cout:
            self.skip = conv2d_video(cin, cout, 1, stride, rng=rng, dtype=dtype, init="default")

    def __call__(self, x: Tensor) -> Tensor:
        y = instance_norm(self.conv2(relu(instance_norm(self.conv1(x)))))
        shortcut = x if self.skip is None else instance_norm(self.skip(x))
        return relu(shortcut + y)
