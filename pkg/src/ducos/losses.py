"""Reconstruction, alignment and edge losses, and their Lagrangian combination."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, abs_, mean, sum_
from .fusion import FusionTrace
from .imageops import gradient_magnitude, minmax_normalize


@dataclass
class LossBundle:
    l_rec: float
    l_cf: float
    l_gr: float
    lagrangian: float
    n_valid: int


def _per_sample_axes(x: Tensor) -> tuple[int, ...]:
    # [N, 1, H, W] normalizes each sample alone; lower ranks pool everything
    return tuple(range(1, x.ndim)) if x.ndim == 4 else tuple(range(x.ndim))


def loss_rec(y: Tensor, z, mask=None) -> Tensor:
    """Mean absolute error over valid pixels (mask defaults to z > 0)."""
    z = np.asarray(z.data if isinstance(z, Tensor) else z)
    if y.shape != z.shape:
        raise ValueError(f"prediction {y.shape} and target {z.shape} differ")
    mask = z > 0 if mask is None else np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        raise ValueError("no valid pixels")
    w = Tensor(mask.astype(y.dtype))
    return sum_(abs_(y - Tensor(z.astype(y.dtype))) * w) / n


def loss_cf(traces: list[FusionTrace]) -> Tensor:
    """Mean over stages of the mean squared gap between H(fused) and H(prompt)."""
    if not traces:
        raise ValueError("no fusion traces")
    total = None
    for i, t in enumerate(traces):
        if t is None or t.h_d is None or t.h_f is None:
            raise ValueError(f"trace {i} carries no projections")
        diff = t.h_d - t.h_f
        term = mean(diff * diff)
        total = term if total is None else total + term
    return total / len(traces)


def loss_gr(y: Tensor, y_rel, op: str = "central") -> Tensor:
    """Mean absolute gap between gradient magnitudes of the min-max normalized maps."""
    y_rel = y_rel if isinstance(y_rel, Tensor) else Tensor(np.asarray(y_rel, dtype=y.dtype))
    if y.shape != y_rel.shape:
        raise ValueError(f"prediction {y.shape} and relative depth {y_rel.shape} differ")
    g_y = gradient_magnitude(minmax_normalize(y, axes=_per_sample_axes(y)), op=op)
    g_rel = gradient_magnitude(minmax_normalize(y_rel, axes=_per_sample_axes(y_rel)), op=op)
    return mean(abs_(g_y - g_rel))


def lagrangian_total(l_rec: Tensor, l_cf: Tensor, l_gr: Tensor, lam: float, mu: float) -> Tensor:
    if lam < 0 or mu < 0:
        raise ValueError(f"multipliers must be non-negative, got lambda={lam}, mu={mu}")
    return l_rec + lam * l_cf + mu * l_gr
