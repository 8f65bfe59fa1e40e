"""Differentiable network building blocks: convolutions, GDN, pooling.

Shape convention is NCHW.  ``conv2d`` kernels are (out_ch, in_ch, kh, kw);
``conv2d_up`` kernels are (in_ch, out_ch, kh, kw) and realize the exact
adjoint of a strided same-padded convolution, so spatial extents multiply
by the upsampling factor.
"""
from __future__ import annotations

import numpy as np

from .autograd import (
    NonFiniteError,
    ShapeError,
    Tensor,
    _make,
    absolute,
    add,
    div,
    mul,
    reshape,
    matmul,
    sqrt,
    square,
    tmean,
    tsum,
)
from . import autograd

__all__ = [
    "conv2d",
    "conv2d_up",
    "maxpool2",
    "dense",
    "concat_channels",
    "channel_mix",
    "gdn",
    "mse",
    "mae",
    "he_uniform",
    "glorot_uniform",
]


def _pad_amounts(n: int, k: int, stride: int, padding: str) -> tuple[int, int, int]:
    """(output extent, pad before, pad after) for one spatial axis."""
    if padding == "same":
        out = -(-n // stride)
        total = max((out - 1) * stride + k - n, 0)
        return out, total // 2, total - total // 2
    if padding == "valid":
        if n < k:
            raise ShapeError(f"valid convolution needs extent >= kernel, got {n} < {k}")
        return (n - k) // stride + 1, 0, 0
    raise ValueError(f"unknown padding {padding!r}; expected 'same' or 'valid'")


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Strided sliding-window view (n, oh, ow, c, kh, kw) of a padded array."""
    n, c, hp, wp = xp.shape
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    sn, sc, sh, sw = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, oh, ow, c, kh, kw),
        strides=(sn, sh * stride, sw * stride, sc, sh, sw),
        writeable=False,
    )


def _corr_forward(xp: np.ndarray, kernel: np.ndarray, stride: int) -> np.ndarray:
    """Strided cross-correlation of padded input with (co, ci, kh, kw) kernel."""
    view = _windows(xp, kernel.shape[2], kernel.shape[3], stride)
    out = np.tensordot(view, kernel, axes=((3, 4, 5), (1, 2, 3)))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _corr_kernel_grad(xp: np.ndarray, g: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """d(correlation)/d(kernel): (co, ci, kh, kw) from padded input and output grad."""
    view = _windows(xp, kh, kw, stride)
    return np.tensordot(g, view, axes=((0, 2, 3), (0, 1, 2)))


def _scatter_windows(dpatch: np.ndarray, hp: int, wp: int, stride: int, dtype) -> np.ndarray:
    """Adjoint of ``_windows``: accumulate (n, oh, ow, c, kh, kw) into (n, c, hp, wp)."""
    n, oh, ow, c, kh, kw = dpatch.shape
    out = np.zeros((n, c, hp, wp), dtype=dtype)
    for p in range(kh):
        for q in range(kw):
            out[:, :, p:p + oh * stride:stride, q:q + ow * stride:stride] += (
                dpatch[:, :, :, :, p, q].transpose(0, 3, 1, 2))
    return out


def _corr_input_grad(g: np.ndarray, kernel: np.ndarray, hp: int, wp: int, stride: int) -> np.ndarray:
    """d(correlation)/d(padded input) for output grad g (n, co, oh, ow)."""
    dpatch = np.tensordot(g.transpose(0, 2, 3, 1), kernel, axes=((3,), (0,)))
    return _scatter_windows(dpatch, hp, wp, stride, g.dtype)


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: str = "same") -> Tensor:
    """Cross-correlate a (n, ci, h, w) batch with a (co, ci, kh, kw) kernel.

    'same' padding keeps output extents at ceil(extent / stride); 'valid'
    applies no padding.
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}")
    if kernel.shape[1] != x.shape[1]:
        raise ShapeError(
            f"kernel input channels {kernel.shape} do not match input channels {x.shape}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    n, ci, h, w = x.shape
    co, _, kh, kw = kernel.shape
    _, pt, pb = _pad_amounts(h, kh, stride, padding)
    _, pl, pr = _pad_amounts(w, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    out = _corr_forward(xp, kernel.data, stride)

    def grad_fn(g):
        dk = _corr_kernel_grad(xp, g, kh, kw, stride)
        dxp = _corr_input_grad(g, kernel.data, xp.shape[2], xp.shape[3], stride)
        dx = dxp[:, :, pt:pt + h, pl:pl + w]
        return dx, dk

    return _make(out, (x, kernel), grad_fn)


def conv2d_up(x: Tensor, kernel: Tensor, factor: int = 2) -> Tensor:
    """Transposed convolution: (n, ci, h, w) -> (n, co, h*factor, w*factor).

    Kernel layout is (ci, co, kh, kw).  Defined as the adjoint of
    ``conv2d(stride=factor, padding='same')`` on the output geometry, so
    ``conv2d_up`` with factor 1 and a 1x1 identity kernel is the identity.
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d_up expects 4-d input and kernel, got {x.shape} and {kernel.shape}")
    if kernel.shape[0] != x.shape[1]:
        raise ShapeError(
            f"kernel input channels {kernel.shape} do not match input channels {x.shape}")
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    n, ci, h, w = x.shape
    _, co, kh, kw = kernel.shape
    h2, w2 = h * factor, w * factor
    _, pt, pb = _pad_amounts(h2, kh, factor, "same")
    _, pl, pr = _pad_amounts(w2, kw, factor, "same")
    hp, wp = h2 + pt + pb, w2 + pl + pr

    dpatch = np.tensordot(x.data.transpose(0, 2, 3, 1), kernel.data, axes=((3,), (0,)))
    outp = _scatter_windows(dpatch, hp, wp, factor, x.data.dtype)
    out = np.ascontiguousarray(outp[:, :, pt:pt + h2, pl:pl + w2])

    def grad_fn(g):
        gp = np.pad(g, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
        dx = _corr_forward(gp, kernel.data, factor)
        dk = _corr_kernel_grad(gp, x.data, kh, kw, factor)
        return dx, dk

    return _make(out, (x, kernel), grad_fn)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; requires even spatial extents.

    The gradient is routed to the first maximal element of each window in
    row-major order.
    """
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 requires even spatial extents, got {h}x{w}")
    win = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        dwin = np.zeros_like(win)
        np.put_along_axis(dwin, idx[..., None], g[..., None], axis=-1)
        dx = dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (np.ascontiguousarray(dx.reshape(n, c, h, w)),)

    return _make(np.ascontiguousarray(out), (x,), grad_fn)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map (n, k) @ (k, m) + (m,)."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"dense input width {x.shape} does not match weight {weight.shape}")
    return add(matmul(x, weight), bias)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two NCHW batches along the channel axis."""
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels needs matching batch/spatial extents, got {a.shape} and {b.shape}")
    return autograd.concat([a, b], axis=1)


def channel_mix(x: Tensor, weight: Tensor) -> Tensor:
    """Per-pixel channel remix: (n, c, h, w) x (d, c) -> (n, d, h, w)."""
    if weight.shape[1] != x.shape[1]:
        raise ShapeError(f"channel_mix weight {weight.shape} does not match channels of {x.shape}")
    out = np.tensordot(x.data, weight.data, axes=((1,), (1,)))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def grad_fn(g):
        dx = np.tensordot(g, weight.data, axes=((1,), (0,))).transpose(0, 3, 1, 2)
        dw = np.tensordot(g, x.data, axes=((0, 2, 3), (0, 2, 3)))
        return np.ascontiguousarray(dx), dw

    return _make(out, (x, weight), grad_fn)


def gdn(x: Tensor, beta: Tensor, gamma: Tensor, inverse: bool = False) -> Tensor:
    """Generalized divisive normalization across channels.

    out_i = in_i / sqrt(beta_i + sum_j gamma_ij * in_j^2); the inverse
    flag multiplies instead of divides (IGDN).  ``beta`` and ``gamma``
    are effective (already non-negative) values.
    """
    c = x.shape[1]
    if beta.shape != (c,):
        raise ShapeError(f"gdn beta shape {beta.shape} does not match {c} channels")
    if gamma.shape != (c, c):
        raise ShapeError(f"gdn gamma shape {gamma.shape} does not match {c} channels")
    pool = add(channel_mix(square(x), gamma), reshape(beta, (1, c, 1, 1)))
    if not np.all(np.isfinite(pool.data)) or np.any(pool.data <= 0):
        raise NonFiniteError("gdn normalization pool is non-finite or non-positive")
    den = sqrt(pool)
    return mul(x, den) if inverse else div(x, den)


def _check_same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op} requires equal shapes, got {a.shape} and {b.shape}")


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared difference over all elements."""
    _check_same_shape(a, b, "mse")
    return tmean(square(a - b))


def mae(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference over all elements."""
    _check_same_shape(a, b, "mae")
    return tmean(absolute(a - b))


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype=np.float32) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int,
                   dtype=np.float32) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)
