"""Parameters, modules and optimizers built on the tensor core."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .spatial import conv2d, conv_transpose2d
from .tensor import Tensor


class Parameter(Tensor):
    """A leaf tensor that always requires gradients."""

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    """Container that discovers parameters and sub-modules from attributes.

    Lists of modules are walked too, and named by index.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield from value.named_modules(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_modules(f"{prefix}{name}.{i}.")

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = own.keys() - state.keys()
        extra = state.keys() - own.keys()
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)}, unexpected={sorted(extra)}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, k: int = 3, bias: bool = True, dtype=np.float32):
        if k not in (1, 3):
            raise ValueError(f"kernel size must be 1 or 3, got {k}")
        self.weight = Parameter(np.zeros((out_ch, in_ch, k, k)), dtype=dtype)
        self.bias = Parameter(np.zeros(out_ch), dtype=dtype) if bias else None

    @property
    def fan_in(self) -> int:
        _, ci, k, _ = self.weight.shape
        return ci * k * k

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias)


class ConvTranspose2d(Module):
    def __init__(self, in_ch: int, out_ch: int, k: int = 4, stride: int = 2, bias: bool = True, dtype=np.float32):
        self.weight = Parameter(np.zeros((in_ch, out_ch, k, k)), dtype=dtype)
        self.bias = Parameter(np.zeros(out_ch), dtype=dtype) if bias else None
        self.stride = stride

    @property
    def fan_in(self) -> int:
        ci, _, k, _ = self.weight.shape
        return ci * k * k

    def forward(self, x: Tensor) -> Tensor:
        return conv_transpose2d(x, self.weight, self.bias, self.stride)


def kaiming_bound(fan_in: int) -> float:
    """Uniform bound for He init with ReLU gain: std = sqrt(2 / fan_in)."""
    return math.sqrt(6.0 / fan_in)


def init_kaiming_uniform(module: Module, seed: int) -> Module:
    """Kaiming-uniform weights (fan-in), zero biases, in deterministic layer order."""
    rng = np.random.default_rng(seed)
    for _, m in module.named_modules():
        if isinstance(m, (Conv2d, ConvTranspose2d)):
            bound = kaiming_bound(m.fan_in)
            m.weight.data = rng.uniform(-bound, bound, m.weight.shape).astype(m.weight.dtype)
            if m.bias is not None:
                m.bias.data = np.zeros_like(m.bias.data)
    return module


class SGD:
    """Plain gradient step: p <- p - lr * grad."""

    def __init__(self, params, lr: float):
        self.params = list(params)
        self.lr = lr

    def step(self) -> None:
        for p in self.params:
            if p.grad is not None:
                p.data = p.data - self.lr * p.grad


class Adam:
    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.dtype, copy=False)
