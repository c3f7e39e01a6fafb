"""Correlative fusion: correlation-gated blending of prompt and depth features."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    Conv2d,
    ConvTranspose2d,
    Module,
    Tensor,
    clip,
    concat,
    mean,
    relu,
    resize_bilinear,
    sigmoid,
    sqrt,
    where_const,
)
from .imageops import minmax_normalize

PCC_MIN_STD = 1e-6
ALPHA_MIN = 1 / (1 + math.e)
ALPHA_MAX = 1 / (1 + math.exp(-1))
FUSIONS = ("pcc", "add", "concat")


def pcc_per_channel(f: Tensor, d: Tensor, keepdims: bool = False) -> Tensor:
    """Pearson correlation per channel over the two spatial axes.

    Channels where either input has std below ``PCC_MIN_STD`` get r = 0.
    """
    if f.shape != d.shape:
        raise ValueError(f"shape mismatch: {f.shape} vs {d.shape}")
    if f.shape[-1] * f.shape[-2] < 2:
        raise ValueError("need at least two spatial positions")
    axes = (-2, -1)
    fc = f - mean(f, axes, keepdims=True)
    dc = d - mean(d, axes, keepdims=True)
    cov = mean(fc * dc, axes, keepdims=True)
    vf = mean(fc * fc, axes, keepdims=True)
    vd = mean(dc * dc, axes, keepdims=True)
    valid = (np.sqrt(vf.data) >= PCC_MIN_STD) & (np.sqrt(vd.data) >= PCC_MIN_STD)
    r = cov / sqrt(where_const(valid, vf * vd, 1.0))
    r = clip(where_const(valid, r, 0.0), -1.0, 1.0)
    if not keepdims:
        r = r.reshape(r.shape[:-2])
    return r


def gate(r: Tensor) -> tuple[Tensor, Tensor]:
    alpha = sigmoid(r)
    return alpha, 1 - alpha


@dataclass
class FusionTrace:
    r: list[np.ndarray] = field(default_factory=list)
    alpha: list[np.ndarray] = field(default_factory=list)
    fused: Tensor | None = None
    h_d: Tensor | None = None
    h_f: Tensor | None = None


RES_SCALE = 0.1


class ResBlock(Module):
    """x + s * conv2(relu(conv1(x))). The small branch scale ``s`` keeps
    activations from compounding through the stacked blocks at init."""

    def __init__(self, channels: int, dtype=np.float32, res_scale: float = RES_SCALE):
        self.conv1 = Conv2d(channels, channels, 3, dtype=dtype)
        self.conv2 = Conv2d(channels, channels, 3, dtype=dtype)
        self.res_scale = res_scale

    def forward(self, x: Tensor) -> Tensor:
        return x + self.res_scale * self.conv2(relu(self.conv1(x)))


class ResGroup(Module):
    def __init__(self, channels: int, blocks: int, dtype=np.float32):
        self.blocks = [ResBlock(channels, dtype) for _ in range(blocks)]

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


class CFStage(Module):
    """One fusion stage mapping (prompt features, depth features) to the next depth features."""

    def __init__(
        self,
        channels: int,
        prompt_channels: int,
        iterations: int = 3,
        blocks: int = 2,
        deconv_kernel: int = 4,
        patch_size: int = 14,
        fusion: str = "pcc",
        h_shared: bool = False,
        dtype=np.float32,
    ):
        if iterations < 1:
            raise ValueError("iterations must be >= 1")
        if fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}, got {fusion!r}")
        self.iterations = iterations
        self.patch_size = patch_size
        self.fusion = fusion
        self.h_shared = h_shared
        self.prompt_proj = Conv2d(prompt_channels, channels, 1, dtype=dtype)
        self.deconv = ConvTranspose2d(channels, channels, deconv_kernel, 2, dtype=dtype)
        self.resgroup = ResGroup(channels, blocks, dtype)
        self.tau2 = Conv2d(channels, channels, 3, dtype=dtype)
        self.h_proj_d = Conv2d(channels, 1, 1, dtype=dtype)
        self.h_proj_f = self.h_proj_d if h_shared else Conv2d(channels, 1, 1, dtype=dtype)
        if fusion == "concat":
            self.fuse_proj = Conv2d(2 * channels, channels, 1, dtype=dtype)

    def named_parameters(self, prefix: str = ""):
        seen = set()
        for name, p in super().named_parameters(prefix):
            if id(p) not in seen:
                seen.add(id(p))
                yield name, p

    def named_modules(self, prefix: str = ""):
        seen = set()
        for name, m in super().named_modules(prefix):
            if id(m) not in seen:
                seen.add(id(m))
                yield name, m

    def prompt_branch(self, prompt: Tensor, size: tuple[int, int]) -> Tensor:
        H, W = size
        p = self.patch_size
        want = (math.ceil(H / p), math.ceil(W / p))
        if tuple(prompt.shape[-2:]) != want:
            raise ValueError(f"prompt spatial dims {tuple(prompt.shape[-2:])} do not match {want} for {H}x{W}, p={p}")
        return resize_bilinear(self.deconv(self.prompt_proj(prompt)), H, W)

    def fuse(self, f_hat: Tensor, d_hat: Tensor, trace: FusionTrace, force_alpha: float | None) -> Tensor:
        if self.fusion == "add":
            return f_hat + d_hat
        if self.fusion == "concat":
            return self.fuse_proj(concat([f_hat, d_hat], axis=1))
        if force_alpha is not None:
            r = Tensor(np.zeros(d_hat.shape[:2] + (1, 1), dtype=d_hat.dtype))
            alpha = Tensor(np.full(r.shape, force_alpha, dtype=d_hat.dtype))
            beta = 1 - alpha
        else:
            r = pcc_per_channel(f_hat, d_hat, keepdims=True)
            alpha, beta = gate(r)
        trace.r.append(r.data[..., 0, 0].copy())
        trace.alpha.append(alpha.data[..., 0, 0].copy())
        return alpha * f_hat + beta * d_hat

    def forward(
        self, prompt, depth: Tensor, force_alpha: float | None = None, valid_hw: tuple[int, int] | None = None
    ) -> tuple[Tensor, FusionTrace]:
        """``valid_hw`` restricts the H(.) projections to the unpadded top-left region."""
        prompt = prompt if isinstance(prompt, Tensor) else Tensor(np.asarray(prompt, dtype=depth.dtype))
        f_hat = self.prompt_branch(prompt, depth.shape[-2:])
        trace = FusionTrace()
        fused = depth
        for _ in range(self.iterations):
            d_hat = self.resgroup(fused)
            fused = self.fuse(f_hat, d_hat, trace, force_alpha)
        trace.fused = fused
        h, w = valid_hw or depth.shape[-2:]
        trace.h_d = minmax_normalize(self.h_proj_d(fused)[..., :h, :w], axes=(1, 2, 3))
        trace.h_f = minmax_normalize(self.h_proj_f(f_hat)[..., :h, :w], axes=(1, 2, 3))
        return self.tau2(fused), trace


def cf_forward(stage: CFStage, prompt, depth: Tensor, force_alpha: float | None = None):
    """Stage forward that also accepts unbatched [C, H, W] inputs."""
    if depth.ndim == 3:
        prompt = prompt if isinstance(prompt, Tensor) else Tensor(np.asarray(prompt, dtype=depth.dtype))
        out, trace = stage(prompt.reshape((1,) + prompt.shape), depth.reshape((1,) + depth.shape), force_alpha)
        return out.reshape(out.shape[1:]), trace
    return stage(prompt, depth, force_alpha)
