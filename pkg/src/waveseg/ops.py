"""Differentiable NCHW primitives: convolutions, pooling, resizing, batch norm.

All operations take and return :class:`~waveseg.tensor.Tensor4` values and
record themselves on the active tape. Convolution is implemented as im2col
plus a batched matmul; the column gather/scatter loops run over the (small)
kernel footprint only, so the inner work is all vectorized.

Correctness of conv2d is defined by the direct summation

    out[n, o, i, j] = sum_{c, u, v} x[n, c, i*s + u - p, j*s + v - p] * w[o, c, u, v]

and transposed_conv2d is its exact adjoint; both are pinned against scalar
oracles and the adjoint identity in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor4, check_same_dtype, record


@dataclass
class ConvParams:
    """Weights and geometry of one convolution.

    weight dims are (out_c, in_c, kh, kw); bias, when present, is stored as a
    (1, out_c, 1, 1) tensor so every parameter stays 4-D. Output spatial dims
    follow floor((h + 2*padding - kh) / stride) + 1.
    """

    weight: Tensor4
    bias: Optional[Tensor4] = None
    stride: int = 1
    padding: int = 0


def _im2col(xpad: np.ndarray, kh: int, kw: int, s: int, oh: int, ow: int) -> np.ndarray:
    n, c = xpad.shape[:2]
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=xpad.dtype)
    for u in range(kh):
        for v in range(kw):
            cols[:, :, u, v] = xpad[:, :, u : u + s * oh : s, v : v + s * ow : s]
    return cols.reshape(n, c * kh * kw, oh * ow)


def _col2im(gcols: np.ndarray, pad_shape, kh: int, kw: int, s: int, oh: int, ow: int) -> np.ndarray:
    n, c = pad_shape[:2]
    out = np.zeros(pad_shape, dtype=gcols.dtype)
    g = gcols.reshape(n, c, kh, kw, oh, ow)
    for u in range(kh):
        for v in range(kw):
            out[:, :, u : u + s * oh : s, v : v + s * ow : s] += g[:, :, u, v]
    return out


def _check_bias(op: str, bias: Optional[Tensor4], out_c: int) -> None:
    if bias is not None and bias.dims != (1, out_c, 1, 1):
        raise ShapeError(f"{op}: bias dims {bias.dims} != (1, {out_c}, 1, 1)")


def conv2d(x: Tensor4, p: ConvParams) -> Tensor4:
    """2-D cross-correlation with stride and symmetric zero padding."""
    w, b, s, pad = p.weight, p.bias, p.stride, p.padding
    if s < 1 or pad < 0:
        raise ConfigError(f"conv2d: stride {s} and padding {pad} must be >= 1 and >= 0")
    co, ci, kh, kw = w.dims
    n, c, h, wd = x.dims
    if c != ci:
        raise ShapeError(f"conv2d: input dims {x.dims} have {c} channels but weight dims {w.dims} expect {ci}")
    _check_bias("conv2d", b, co)
    check_same_dtype("conv2d", x, w, b)
    hp, wp = h + 2 * pad, wd + 2 * pad
    if hp < kh or wp < kw:
        raise ShapeError(f"conv2d: padded input {hp}x{wp} smaller than kernel {kh}x{kw}")
    oh, ow = (hp - kh) // s + 1, (wp - kw) // s + 1
    xpad = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _im2col(xpad, kh, kw, s, oh, ow)
    wmat = w.data.reshape(co, ci * kh * kw)
    out = np.matmul(wmat, cols).reshape(n, co, oh, ow)
    if b is not None:
        out += b.data
    y = Tensor4(out)

    def vjp(out_grads):
        (gy,) = out_grads
        gmat = gy.reshape(n, co, oh * ow)
        gw = np.tensordot(gmat, cols, axes=((0, 2), (0, 2))).reshape(w.dims)
        gcols = np.matmul(wmat.T, gmat)
        gxpad = _col2im(gcols, xpad.shape, kh, kw, s, oh, ow)
        gx = gxpad[:, :, pad : pad + h, pad : pad + wd] if pad else gxpad
        if b is None:
            return gx, gw
        gb = gy.sum(axis=(0, 2, 3)).reshape(1, co, 1, 1)
        return gx, gw, gb

    inputs = (x, w) if b is None else (x, w, b)
    record("conv2d", inputs, (y,), vjp)
    return y


def transposed_conv2d(x: Tensor4, p: ConvParams) -> Tensor4:
    """Adjoint of the stride-2 conv2d sharing the same weight, plus bias.

    The weight is read as (in_c, out_c, kh, kw): axis 0 must match the input
    channels and axis 1 gives the output channels, so that
    <transposed_conv2d(x, w), y> == <x, conv2d(y, w)> holds exactly.
    Only configurations that upscale by exactly 2x are accepted.
    """
    w, b, s, pad = p.weight, p.bias, p.stride, p.padding
    a, outc, kh, kw = w.dims
    if s != 2 or kh - 2 * pad != 2 or kw - 2 * pad != 2:
        raise ConfigError(
            f"transposed_conv2d: stride {s}, kernel {kh}x{kw}, padding {pad} does not upscale by exactly 2x"
        )
    n, c, h, wd = x.dims
    if c != a:
        raise ShapeError(f"transposed_conv2d: input dims {x.dims} have {c} channels but weight dims {w.dims} expect {a}")
    _check_bias("transposed_conv2d", b, outc)
    check_same_dtype("transposed_conv2d", x, w, b)
    hp, wp = (h - 1) * s + kh, (wd - 1) * s + kw
    wmat = w.data.reshape(a, outc * kh * kw)
    xmat = x.data.reshape(n, a, h * wd)
    gcols = np.matmul(wmat.T, xmat)
    opad = _col2im(gcols, (n, outc, hp, wp), kh, kw, s, h, wd)
    out = opad[:, :, pad : hp - pad, pad : wp - pad] if pad else opad
    if b is not None:
        out = out + b.data
    y = Tensor4(out)
    oh, ow = out.shape[2], out.shape[3]

    def vjp(out_grads):
        (gy,) = out_grads
        gypad = np.pad(gy, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else gy
        gcols_y = _im2col(gypad, kh, kw, s, h, wd)
        gx = np.matmul(wmat, gcols_y).reshape(x.dims)
        gw = np.tensordot(xmat, gcols_y, axes=((0, 2), (0, 2))).reshape(w.dims)
        if b is None:
            return gx, gw
        gb = gy.sum(axis=(0, 2, 3)).reshape(1, outc, 1, 1)
        return gx, gw, gb

    inputs = (x, w) if b is None else (x, w, b)
    record("transposed_conv2d", inputs, (y,), vjp)
    return y


@lru_cache(maxsize=256)
def _resize_matrix(in_size: int, out_size: int, dtype: str) -> np.ndarray:
    """Row-stochastic interpolation matrix with half-pixel sample centers."""
    m = np.zeros((out_size, in_size), dtype=np.float64)
    scale = in_size / out_size
    for i in range(out_size):
        src = (i + 0.5) * scale - 0.5
        src = min(max(src, 0.0), in_size - 1.0)
        lo = int(np.floor(src))
        hi = min(lo + 1, in_size - 1)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m.astype(np.float32) if dtype == "f32" else m


def bilinear_resize(x: Tensor4, out_h: int, out_w: int) -> Tensor4:
    """Separable bilinear resampling to (out_h, out_w), half-pixel convention."""
    if out_h < 1 or out_w < 1:
        raise ConfigError(f"bilinear_resize: target {out_h}x{out_w} must be positive")
    n, c, h, w = x.dims
    ah = _resize_matrix(h, out_h, x.dtype)
    aw = _resize_matrix(w, out_w, x.dtype)
    out = np.matmul(np.matmul(ah, x.data), aw.T)
    y = Tensor4(out)

    def vjp(out_grads):
        (gy,) = out_grads
        return (np.matmul(np.matmul(ah.T, gy), aw),)

    record("bilinear_resize", (x,), (y,), vjp)
    return y


def bilinear_upsample(x: Tensor4, factor: int) -> Tensor4:
    """Upscale spatial dims by an integer factor (factor 1 is the identity)."""
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise ConfigError(f"bilinear_upsample: factor must be an integer >= 1; got {factor!r}")
    return bilinear_resize(x, x.h * factor, x.w * factor)


def add(a: Tensor4, b: Tensor4) -> Tensor4:
    if a.dims != b.dims:
        raise ShapeError(f"add: dims {a.dims} != {b.dims}")
    check_same_dtype("add", a, b)
    y = Tensor4(a.data + b.data)

    def vjp(out_grads):
        (gy,) = out_grads
        return gy, gy

    record("add", (a, b), (y,), vjp)
    return y


def scale(x: Tensor4, alpha: float) -> Tensor4:
    y = Tensor4(x.data * alpha)

    def vjp(out_grads):
        (gy,) = out_grads
        return (gy * alpha,)

    record("scale", (x,), (y,), vjp)
    return y


def relu(x: Tensor4) -> Tensor4:
    mask = x.data > 0
    y = Tensor4(np.where(mask, x.data, 0))

    def vjp(out_grads):
        (gy,) = out_grads
        return (np.where(mask, gy, 0),)

    record("relu", (x,), (y,), vjp)
    return y


def concat_channels(tensors: Sequence[Tensor4]) -> Tensor4:
    if not tensors:
        raise ShapeError("concat_channels: need at least one tensor")
    base = tensors[0]
    for t in tensors[1:]:
        if (t.n, t.h, t.w) != (base.n, base.h, base.w):
            raise ShapeError(f"concat_channels: dims {t.dims} incompatible with {base.dims}")
    check_same_dtype("concat_channels", *tensors)
    y = Tensor4(np.concatenate([t.data for t in tensors], axis=1))
    offsets = np.cumsum([0] + [t.c for t in tensors])

    def vjp(out_grads):
        (gy,) = out_grads
        return tuple(gy[:, offsets[i] : offsets[i + 1]] for i in range(len(tensors)))

    record("concat_channels", tuple(tensors), (y,), vjp)
    return y


def softmax_channels(x: Tensor4) -> Tensor4:
    """Softmax over the channel axis, numerically stabilized."""
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    sm = e / e.sum(axis=1, keepdims=True)
    y = Tensor4(sm)

    def vjp(out_grads):
        (gy,) = out_grads
        dot = (gy * sm).sum(axis=1, keepdims=True)
        return (sm * (gy - dot),)

    record("softmax_channels", (x,), (y,), vjp)
    return y


def max_pool_2x2(x: Tensor4) -> Tensor4:
    """2x2 stride-2 max pooling; ties route the gradient to the first maximum."""
    n, c, h, w = x.dims
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool_2x2: spatial dims {h}x{w} must be even")
    win = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    y = Tensor4(out)

    def vjp(out_grads):
        (gy,) = out_grads
        g4 = np.zeros((n, c, h // 2, w // 2, 4), dtype=gy.dtype)
        np.put_along_axis(g4, idx[..., None], gy[..., None], axis=-1)
        gx = g4.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    record("max_pool_2x2", (x,), (y,), vjp)
    return y


def sum_all(x: Tensor4) -> Tensor4:
    y = Tensor4(x.data.sum(dtype=x.data.dtype).reshape(1, 1, 1, 1))

    def vjp(out_grads):
        (gy,) = out_grads
        return (np.full(x.dims, gy.reshape(()), dtype=gy.dtype),)

    record("sum_all", (x,), (y,), vjp)
    return y


def mean_all(x: Tensor4) -> Tensor4:
    inv = 1.0 / x.size
    y = Tensor4((x.data.sum(dtype=x.data.dtype) * inv).reshape(1, 1, 1, 1))

    def vjp(out_grads):
        (gy,) = out_grads
        return (np.full(x.dims, gy.reshape(()) * inv, dtype=gy.dtype),)

    record("mean_all", (x,), (y,), vjp)
    return y


def batch_norm(
    x: Tensor4,
    gamma: Tensor4,
    beta: Tensor4,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor4:
    """Per-channel batch normalization with running statistics.

    In training mode the batch mean/biased variance over (n, h, w) normalize
    the input and the running buffers (shape (1, c, 1, 1), plain arrays) are
    updated in place; in eval mode the running statistics are used.
    """
    n, c, h, w = x.dims
    if gamma.dims != (1, c, 1, 1) or beta.dims != (1, c, 1, 1):
        raise ShapeError(f"batch_norm: affine params must be (1, {c}, 1, 1); got {gamma.dims} and {beta.dims}")
    check_same_dtype("batch_norm", x, gamma, beta)
    if training:
        mu = x.data.mean(axis=(0, 2, 3), keepdims=True)
        var = x.data.var(axis=(0, 2, 3), keepdims=True)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu = running_mean.astype(x.data.dtype, copy=False)
        var = running_var.astype(x.data.dtype, copy=False)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    y = Tensor4(gamma.data * xhat + beta.data)

    def vjp(out_grads):
        (gy,) = out_grads
        gbeta = gy.sum(axis=(0, 2, 3), keepdims=True)
        ggamma = (gy * xhat).sum(axis=(0, 2, 3), keepdims=True)
        if training:
            m = n * h * w
            gx = gamma.data * inv * (gy - gbeta / m - xhat * ggamma / m)
        else:
            gx = gamma.data * inv * gy
        return gx, ggamma, gbeta

    record("batch_norm", (x, gamma, beta), (y,), vjp)
    return y
