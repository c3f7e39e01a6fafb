"""Non-learned image and depth operators.

All functions accept a numpy array or a :class:`Tensor`. Arrays in give
arrays out; tensors keep their graph so the operators can sit inside a loss.
Spatial operators act on the last two axes.
"""

from __future__ import annotations

import contextlib
import functools
import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, central_diff, resample, sqrt
from .autodiff import tensor as T

NORM_EPS = 1e-8
GRAD_EPS = 1e-8
CUBIC_A = -0.5


def _arrays_in_arrays_out(fn):
    @functools.wraps(fn)
    def wrapper(x, *args, **kwargs):
        if isinstance(x, Tensor):
            return fn(x, *args, **kwargs)
        arr = np.asarray(x)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        return fn(Tensor(arr), *args, **kwargs).data

    return wrapper


# ------------------------------------------------------------------- kernels
@dataclass(frozen=True)
class Kernel1D:
    taps: tuple[float, ...]
    support: int

    @property
    def total(self) -> float:
        return float(sum(self.taps))


def cubic_weight(s: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    """Keys cubic convolution kernel (Catmull-Rom for a = -0.5)."""
    s = np.abs(np.asarray(s, dtype=np.float64))
    near = ((a + 2) * s - (a + 3)) * s * s + 1
    far = ((a * s - 5 * a) * s + 8 * a) * s - 4 * a
    return np.where(s <= 1, near, np.where(s < 2, far, 0.0))


def cubic_kernel(t: float, a: float = CUBIC_A) -> Kernel1D:
    """Four taps for a sample sitting ``t`` in [0, 1) past its left neighbour."""
    taps = cubic_weight(np.array([t + 1, t, 1 - t, 2 - t]), a)
    return Kernel1D(tuple(float(v) for v in taps), 2)


def gaussian_kernel(sigma: float) -> Kernel1D:
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = math.ceil(3 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (x / sigma) ** 2)
    w /= w.sum()
    return Kernel1D(tuple(float(v) for v in w), radius)


def _clamped_matrix(n_out: int, n_in: int, centres: np.ndarray, offsets: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Scatter ``weights[o, t]`` at input index ``centres[o] + offsets[t]`` with edge clamping."""
    m = np.zeros((n_out, n_in))
    idx = np.clip(centres[:, None] + offsets[None, :], 0, n_in - 1)
    rows = np.repeat(np.arange(n_out), offsets.size)
    np.add.at(m, (rows, idx.ravel()), weights.ravel())
    return m


def bicubic_matrix(n_in: int, n_out: int, a: float = CUBIC_A) -> np.ndarray:
    if n_in < 1 or n_out < 1:
        raise ValueError(f"resize needs positive sizes, got {n_in} -> {n_out}")
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    left = np.floor(src).astype(int)
    t = src - left
    offsets = np.array([-1, 0, 1, 2])
    weights = cubic_weight(t[:, None] - offsets[None, :], a)
    return _clamped_matrix(n_out, n_in, left, offsets, weights)


def convolution_matrix(n: int, kernel: Kernel1D) -> np.ndarray:
    """Same-size 1-D filtering with replicate borders, as an n x n matrix."""
    offsets = np.arange(-kernel.support, kernel.support + 1)
    weights = np.broadcast_to(np.asarray(kernel.taps), (n, offsets.size))
    return _clamped_matrix(n, n, np.arange(n), offsets, weights)


# ------------------------------------------------------------------ resizing
def output_size(h: int, w: int, scale: float) -> tuple[int, int]:
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    return int(round(h * scale)), int(round(w * scale))


@_arrays_in_arrays_out
def bicubic_resize(x, scale: float | None = None, size: tuple[int, int] | None = None):
    """Separable bicubic resampling (a = -0.5, replicate border, no prefilter).

    Give either a ``scale`` factor or an explicit ``size=(out_h, out_w)``.
    """
    H, W = x.shape[-2:]
    if size is None:
        if scale is None:
            raise ValueError("give scale or size")
        size = output_size(H, W, scale)
    oh, ow = size
    if oh < 1 or ow < 1:
        raise ValueError(f"degenerate output size {oh}x{ow}")
    if (oh, ow) == (H, W):
        return x
    return resample(x, bicubic_matrix(H, oh), bicubic_matrix(W, ow))


# ------------------------------------------------------------- normalization
class _StatsReplay:
    """Records detached min/max pairs and can feed them back in the same order.

    Min/max are constants to the backward pass; a finite-difference oracle
    must hold them fixed too, which is what :meth:`replay` is for.
    """

    def __init__(self):
        self.frames: list[tuple[np.ndarray, np.ndarray]] = []
        self._cursor: int | None = None

    def next(self, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self._cursor is None:
            self.frames.append((lo, hi))
            return lo, hi
        lo, hi = self.frames[self._cursor]
        self._cursor += 1
        return lo, hi

    @contextlib.contextmanager
    def replay(self):
        global _stats
        prev, _stats = _stats, self
        self._cursor = 0
        try:
            yield self
        finally:
            self._cursor = None
            _stats = prev


_stats: _StatsReplay | None = None


@contextlib.contextmanager
def record_statistics():
    """Capture every detached normalization statistic computed inside the block."""
    global _stats
    prev, _stats = _stats, _StatsReplay()
    try:
        yield _stats
    finally:
        _stats = prev


@_arrays_in_arrays_out
def minmax_normalize(x, axes=None, eps: float = NORM_EPS):
    """(x - min) / (max - min + eps), statistics detached; ``axes=None`` pools everything."""
    axes = tuple(range(x.ndim)) if axes is None else axes
    lo = x.data.min(axis=axes, keepdims=True)
    hi = x.data.max(axis=axes, keepdims=True)
    if _stats is not None:
        lo, hi = _stats.next(lo, hi)
    return (x - T(lo)) / T(hi - lo + eps)


# ------------------------------------------------------------------ gradients
SOBEL_SMOOTH = Kernel1D((0.25, 0.5, 0.25), 1)


@_arrays_in_arrays_out
def gradient_magnitude(x, op: str = "central", eps: float = GRAD_EPS):
    """sqrt(dx^2 + dy^2 + eps^2) over the last two axes.

    ``op='central'``: central differences, one-sided at borders.
    ``op='sobel'``: the same derivative smoothed across the other axis by
    [1, 2, 1] / 4 (a Sobel operator scaled to unit response on a ramp).
    """
    H, W = x.shape[-2:]
    if H < 2 or W < 2:
        raise ValueError(f"gradient needs at least 2x2 samples, got {H}x{W}")
    dx = central_diff(x, -1)
    dy = central_diff(x, -2)
    if op == "sobel":
        dx = resample(dx, convolution_matrix(H, SOBEL_SMOOTH), np.eye(W))
        dy = resample(dy, np.eye(H), convolution_matrix(W, SOBEL_SMOOTH))
    elif op != "central":
        raise ValueError(f"unknown gradient operator {op!r}")
    return sqrt(dx * dx + dy * dy + eps * eps)


# ------------------------------------------------------------ blur and noise
@_arrays_in_arrays_out
def gaussian_blur(x, sigma: float):
    """Separable Gaussian blur, radius ceil(3 sigma), replicate border."""
    k = gaussian_kernel(sigma)
    H, W = x.shape[-2:]
    return resample(x, convolution_matrix(H, k), convolution_matrix(W, k))


def add_gaussian_noise(x: np.ndarray, mean: float, std: float, seed: int) -> np.ndarray:
    if std < 0:
        raise ValueError(f"noise std must be >= 0, got {std}")
    x = np.asarray(x)
    if std == 0 and mean == 0:
        return x.copy()
    rng = np.random.default_rng(seed)
    return x + rng.normal(mean, std, size=x.shape).astype(x.dtype, copy=False)
