"""Central finite-difference oracle for checking backward passes."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def analytic_grads(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray]) -> list[np.ndarray]:
    leaves = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    backward(fn(*leaves), leaves)
    return [leaf.grad for leaf in leaves]


def numeric_grads(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], h: float = 1e-4) -> list[np.ndarray]:
    """d fn / d arrays[i] by central differences, one coordinate at a time."""
    base = [np.array(a, dtype=np.float64) for a in arrays]

    def value(xs):
        return float(fn(*[Tensor(x) for x in xs]).data)

    out = []
    for i, a in enumerate(base):
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + h
            fp = value(base)
            flat[j] = keep - h
            fm = value(base)
            flat[j] = keep
            g.reshape(-1)[j] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-10) -> float:
    """||a - b|| / max(||a||, ||b||, floor)."""
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def check_gradients(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], h: float = 1e-4) -> float:
    """Largest relative error over all inputs between backward and the finite-difference oracle."""
    ana = analytic_grads(fn, arrays)
    num = numeric_grads(fn, arrays, h)
    return max(relative_error(x, y) for x, y in zip(ana, num))
