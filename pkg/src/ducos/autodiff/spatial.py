"""Differentiable spatial operators on NCHW tensors."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, make_op


def pad_replicate(x: Tensor, pad: int | tuple[int, int, int, int]) -> Tensor:
    """Edge-replicate the last two axes. ``pad`` is int or (top, bottom, left, right)."""
    if isinstance(pad, int):
        pad = (pad, pad, pad, pad)
    top, bottom, left, right = pad
    if min(pad) < 0:
        raise ValueError("padding must be non-negative")
    if not any(pad):
        return x
    widths = [(0, 0)] * (x.ndim - 2) + [(top, bottom), (left, right)]
    H, W = x.shape[-2:]

    def bw(g):
        g = g.copy()
        # fold replicated rows/cols back onto the edge they copy
        if top:
            g[..., top, :] += g[..., :top, :].sum(axis=-2)
        if bottom:
            g[..., top + H - 1, :] += g[..., top + H :, :].sum(axis=-2)
        g = g[..., top : top + H, :]
        if left:
            g[..., left] += g[..., :left].sum(axis=-1)
        if right:
            g[..., left + W - 1] += g[..., left + W :].sum(axis=-1)
        return (np.ascontiguousarray(g[..., left : left + W]),)

    return make_op(np.pad(x.data, widths, mode="edge"), (x,), bw, "pad_replicate")


def _conv_valid(x: Tensor, w: Tensor, b: Tensor | None, stride: int) -> Tensor:
    N, C, Hp, Wp = x.shape
    Co, _, k, _ = w.shape
    Ho = (Hp - k) // stride + 1
    Wo = (Wp - k) // stride + 1
    xd, wd = x.data, w.data
    dtype = np.result_type(xd, wd)
    # im2col laid out as [C*k*k, N*Ho*Wo] so every copy is row-contiguous
    xt = xd.transpose(1, 0, 2, 3)
    cols = np.empty((C, k, k, N, Ho, Wo), dtype=dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xt[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride]
    cols = cols.reshape(C * k * k, N * Ho * Wo)
    w2 = wd.reshape(Co, C * k * k)
    out = w2 @ cols
    if b is not None:
        out += b.data[:, None]
    out = np.ascontiguousarray(out.reshape(Co, N, Ho, Wo).transpose(1, 0, 2, 3))

    def bw(g):
        gt = g.transpose(1, 0, 2, 3).reshape(Co, N * Ho * Wo)
        gw = (gt @ cols.T).reshape(wd.shape)
        gcols = (w2.T @ gt).reshape(C, k, k, N, Ho, Wo)
        gx = np.zeros((C, N, Hp, Wp), dtype=dtype)
        for i in range(k):
            for j in range(k):
                gx[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += gcols[:, i, j]
        gx = gx.transpose(1, 0, 2, 3)
        if b is None:
            return gx, gw
        return gx, gw, gt.sum(axis=1)

    parents = (x, w, b) if b is not None else (x, w)
    return make_op(out, parents, bw, "conv2d")


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: str = "replicate") -> Tensor:
    """2-D convolution (cross-correlation) with replicate "same" padding.

    x: [N, C, H, W]; w: [Co, C, k, k]; b: [Co] or None.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"channel mismatch: input has {x.shape[1]}, weight expects {w.shape[1]}")
    k = w.shape[2]
    if w.shape[3] != k:
        raise ValueError("only square kernels are supported")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if padding == "replicate":
        lo = (k - 1) // 2
        x = pad_replicate(x, (lo, k - 1 - lo, lo, k - 1 - lo))
    elif padding != "valid":
        raise ValueError(f"unsupported padding {padding!r}")
    return _conv_valid(x, w, b, stride)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 2) -> Tensor:
    """Transposed convolution; output spatial size is exactly ``stride`` times the input.

    w: [Ci, Co, k, k] with k - stride even (the surplus is cropped symmetrically).
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv_transpose2d expects 4-d input and weight, got {x.shape} and {w.shape}")
    N, Ci, h, wd_ = x.shape
    if h < 1 or wd_ < 1:
        raise ValueError("spatial dims must be positive")
    if w.shape[0] != Ci:
        raise ValueError(f"channel mismatch: input has {Ci}, weight expects {w.shape[0]}")
    _, Co, k, _ = w.shape
    if k < stride or (k - stride) % 2:
        raise ValueError(f"kernel {k} incompatible with stride {stride}")
    crop = (k - stride) // 2
    xd, wdat = x.data, w.data
    Hf, Wf = (h - 1) * stride + k, (wd_ - 1) * stride + k
    xf = xd.transpose(0, 2, 3, 1).reshape(N * h * wd_, Ci)
    w2 = wdat.reshape(Ci, Co * k * k)
    cols = (xf @ w2).reshape(N, h, wd_, Co, k, k)
    full = np.zeros((N, Co, Hf, Wf), dtype=np.result_type(xd, wdat))
    for i in range(k):
        for j in range(k):
            full[:, :, i : i + stride * h : stride, j : j + stride * wd_ : stride] += cols[..., i, j].transpose(0, 3, 1, 2)
    out = full[:, :, crop : crop + stride * h, crop : crop + stride * wd_]
    if b is not None:
        out = out + b.data.reshape(1, Co, 1, 1)

    def bw(g):
        gfull = np.zeros((N, Co, Hf, Wf), dtype=g.dtype)
        gfull[:, :, crop : crop + stride * h, crop : crop + stride * wd_] = g
        gcols = np.empty((N, h, wd_, Co, k, k), dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                gcols[..., i, j] = gfull[:, :, i : i + stride * h : stride, j : j + stride * wd_ : stride].transpose(0, 2, 3, 1)
        gcols = gcols.reshape(N * h * wd_, Co * k * k)
        gx = (gcols @ w2.T).reshape(N, h, wd_, Ci).transpose(0, 3, 1, 2)
        gw = (xf.T @ gcols).reshape(wdat.shape)
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, w, b) if b is not None else (x, w)
    return make_op(np.ascontiguousarray(out), parents, bw, "conv_transpose2d")


def resample(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Separable linear resampling: out = rows @ x @ cols.T over the last two axes."""
    rows = np.asarray(rows, dtype=x.dtype)
    cols = np.asarray(cols, dtype=x.dtype)
    if rows.shape[1] != x.shape[-2] or cols.shape[1] != x.shape[-1]:
        raise ValueError(f"resampling matrices {rows.shape}, {cols.shape} do not fit input {x.shape}")
    out = rows @ (x.data @ cols.T)
    return make_op(out, (x,), lambda g: (rows.T @ (g @ cols),), "resample")


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """1-D linear interpolation weights, half-pixel centres (align_corners=False)."""
    if n_in < 1 or n_out < 1:
        raise ValueError("sizes must be >= 1")
    m = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = src - i0
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1 - t)
    np.add.at(m, (rows, i1), t)
    return m


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got {out_h}x{out_w}")
    H, W = x.shape[-2:]
    if (H, W) == (out_h, out_w):
        return x
    return resample(x, bilinear_matrix(H, out_h), bilinear_matrix(W, out_w))


def central_diff(x: Tensor, axis: int) -> Tensor:
    """First derivative along ``axis``: central inside, one-sided at the two ends."""
    axis = axis % x.ndim
    n = x.shape[axis]
    if n < 2:
        raise ValueError("need at least 2 samples along the differentiated axis")
    d = x.data

    def sl(a, b):
        idx = [slice(None)] * x.ndim
        idx[axis] = slice(a, b)
        return tuple(idx)

    out = np.empty_like(d)
    out[sl(1, n - 1)] = (d[sl(2, n)] - d[sl(0, n - 2)]) / 2
    out[sl(0, 1)] = d[sl(1, 2)] - d[sl(0, 1)]
    out[sl(n - 1, n)] = d[sl(n - 1, n)] - d[sl(n - 2, n - 1)]

    def bw(g):
        gx = np.zeros_like(g)
        inner = g[sl(1, n - 1)] / 2
        gx[sl(2, n)] += inner
        gx[sl(0, n - 2)] -= inner
        gx[sl(1, 2)] += g[sl(0, 1)]
        gx[sl(0, 1)] -= g[sl(0, 1)]
        gx[sl(n - 1, n)] += g[sl(n - 1, n)]
        gx[sl(n - 2, n - 1)] -= g[sl(n - 1, n)]
        return (gx,)

    return make_op(out, (x,), bw, "central_diff")
