"""Network operators: convolution, normalization, Gram statistics, losses.

All operators are pure functions of their inputs and differentiable where it
makes sense. Convolutions are im2col + matmul under the hood; the transposed
convolution is the exact adjoint of the matching forward convolution, sharing
the same kernel, so the inner-product identity
``<conv2d(x), y> == <x, conv2d_transpose(y)>`` holds to rounding.
"""

from __future__ import annotations

from typing import NamedTuple, Optional, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _matching_dtype, record_op


class Padding(NamedTuple):
    """Spatial padding: ``zero`` fill or ``reflect`` with an explicit margin."""

    mode: str
    margin: int

    @classmethod
    def zero(cls, margin: int) -> "Padding":
        return cls("zero", margin)

    @classmethod
    def reflect(cls, margin: int) -> "Padding":
        return cls("reflect", margin)


PaddingLike = Union[int, Padding, tuple]


def as_padding(padding: PaddingLike) -> Padding:
    if isinstance(padding, Padding):
        pad = padding
    elif isinstance(padding, int):
        pad = Padding("zero", padding)
    else:
        pad = Padding(*padding)
    if pad.mode not in ("zero", "reflect"):
        raise ValueError(f"unknown padding mode {pad.mode!r}")
    if pad.margin < 0:
        raise ValueError("padding margin must be >= 0")
    return pad


def _pad(x: np.ndarray, pad: Padding) -> np.ndarray:
    m = pad.margin
    if m == 0:
        return x
    width = ((0, 0), (0, 0), (m, m), (m, m))
    if pad.mode == "zero":
        return np.pad(x, width)
    h, w = x.shape[2], x.shape[3]
    if m >= h or m >= w:
        raise ValueError(
            f"reflection margin {m} must be smaller than spatial dims {h}x{w}"
        )
    return np.pad(x, width, mode="reflect")


def _fold_reflect_axis(g: np.ndarray, margin: int, axis: int) -> np.ndarray:
    # Adjoint of mirror padding on one axis: border gradients fold back onto
    # their mirrored interior source positions.
    if margin == 0:
        return g
    g = np.moveaxis(g, axis, 0)
    size = g.shape[0] - 2 * margin
    core = g[margin:margin + size].copy()
    core[1:margin + 1] += g[:margin][::-1]
    core[size - 1 - margin:size - 1] += g[margin + size:][::-1]
    return np.moveaxis(core, 0, axis)


def _unpad_adjoint(g: np.ndarray, pad: Padding, h: int, w: int) -> np.ndarray:
    m = pad.margin
    if m == 0:
        return g
    if pad.mode == "zero":
        return g[:, :, m:m + h, m:m + w]
    return _fold_reflect_axis(_fold_reflect_axis(g, m, 2), m, 3)


def _out_size(size: int, k: int, stride: int, margin: int) -> int:
    return (size + 2 * margin - k) // stride + 1


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _conv_forward(x: np.ndarray, k: np.ndarray, stride: int, pad: Padding) -> np.ndarray:
    xp = _pad(x, pad)
    win = _windows(xp, k.shape[2], k.shape[3], stride)
    out = np.tensordot(win, k, axes=((1, 4, 5), (1, 2, 3)))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _conv_kernel_grad(x: np.ndarray, g: np.ndarray, k_shape, stride: int, pad: Padding) -> np.ndarray:
    xp = _pad(x, pad)
    win = _windows(xp, k_shape[2], k_shape[3], stride)
    return np.tensordot(g, win, axes=((0, 2, 3), (0, 2, 3)))


def _conv_input_adjoint(
    y: np.ndarray, k: np.ndarray, stride: int, pad: Padding, out_hw: tuple[int, int]
) -> np.ndarray:
    # Exact transpose of _conv_forward as a linear map in its input.
    n = y.shape[0]
    co, ci, kh, kw = k.shape
    h_out, w_out = out_hw
    hp, wp = h_out + 2 * pad.margin, w_out + 2 * pad.margin
    ho, wo = y.shape[2], y.shape[3]
    contrib = np.tensordot(y, k, axes=((1,), (0,)))  # [n, ho, wo, ci, kh, kw]
    contrib = contrib.transpose(0, 3, 4, 5, 1, 2)  # [n, ci, kh, kw, ho, wo]
    acc = np.zeros((n, ci, hp, wp), dtype=y.dtype)
    for i in range(kh):
        for j in range(kw):
            acc[:, :, i:i + stride * (ho - 1) + 1:stride,
                j:j + stride * (wo - 1) + 1:stride] += contrib[:, :, i, j]
    return _unpad_adjoint(acc, pad, h_out, w_out)


def _validate_stride(stride: int) -> None:
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: PaddingLike = 0) -> Tensor:
    """2-d cross-correlation of ``x`` with ``kernel [c_out, c_in, k_h, k_w]``.

    Output dims are ``(n, c_out, (h+2p-k_h)//stride + 1, (w+2p-k_w)//stride + 1)``.
    Differentiable with respect to both the input and the kernel.
    """
    _validate_stride(stride)
    _matching_dtype(x, kernel)
    pad = as_padding(padding)
    n, c, h, w = x.dims
    co, ci, kh, kw = kernel.dims
    if c != ci:
        raise ValueError(f"channel mismatch: input has {c}, kernel expects {ci}")
    if _out_size(h, kh, stride, pad.margin) < 1 or _out_size(w, kw, stride, pad.margin) < 1:
        raise ValueError("kernel larger than padded input")

    out = _conv_forward(x.data, kernel.data, stride, pad)
    x_data, k_data = x.data, kernel.data

    def _backward(g, needs):
        gx = (
            _conv_input_adjoint(g, k_data, stride, pad, (h, w))
            if needs[0] else None
        )
        gk = (
            _conv_kernel_grad(x_data, g, k_data.shape, stride, pad)
            if needs[1] else None
        )
        return gx, gk

    return record_op((x, kernel), out, _backward)


def conv2d_transpose(
    x: Tensor,
    kernel: Tensor,
    stride: int = 1,
    padding: PaddingLike = 0,
    output_size: Optional[tuple[int, int]] = None,
) -> Tensor:
    """Adjoint of :func:`conv2d` as a linear map, with the kernel shared.

    ``kernel [c_out, c_in, k_h, k_w]`` maps ``c_out``-channel input back to
    ``c_in`` channels. ``output_size`` declares the spatial dims of the result;
    the default is ``(stride*h, stride*w)``, so stride 2 doubles spatial dims.
    The declared size must be consistent with the forward convolution's
    geometry.
    """
    _validate_stride(stride)
    _matching_dtype(x, kernel)
    pad = as_padding(padding)
    n, c, h, w = x.dims
    co, ci, kh, kw = kernel.dims
    if c != co:
        raise ValueError(f"channel mismatch: input has {c}, kernel produces {co}")
    hw_out = output_size if output_size is not None else (stride * h, stride * w)
    h_out, w_out = hw_out
    if _out_size(h_out, kh, stride, pad.margin) != h or _out_size(w_out, kw, stride, pad.margin) != w:
        raise ValueError(
            f"declared output size {h_out}x{w_out} is inconsistent with input "
            f"{h}x{w} for kernel {kh}x{kw}, stride {stride}, margin {pad.margin}"
        )

    out = _conv_input_adjoint(x.data, kernel.data, stride, pad, (h_out, w_out))
    x_data, k_data = x.data, kernel.data

    def _backward(g, needs):
        # Adjoint of the adjoint is the forward convolution; the kernel
        # gradient is the usual one with the roles of input and output
        # gradient swapped.
        gx = _conv_forward(g, k_data, stride, pad) if needs[0] else None
        gk = (
            _conv_kernel_grad(g, x_data, k_data.shape, stride, pad)
            if needs[1] else None
        )
        return gx, gk

    return record_op((x, kernel), out, _backward)


def relu(x: Tensor) -> Tensor:
    """Elementwise ``max(0, x)``; the subgradient at 0 is 0."""
    mask = x.data > 0
    out = x.data * mask

    def _backward(g, needs):
        return (g * mask,)

    return record_op((x,), out, _backward)


def instance_norm(x: Tensor, scale: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize every (sample, channel) slice to zero mean / unit variance.

    ``scale`` and ``shift`` are per-channel ``(1, c, 1, 1)`` affine parameters.
    Variance is the biased (mean of squares) estimate.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    _matching_dtype(x, scale, shift)
    n, c, h, w = x.dims
    for name, t in (("scale", scale), ("shift", shift)):
        if t.dims != (1, c, 1, 1):
            raise ValueError(f"{name} must have dims (1, {c}, 1, 1), got {t.dims}")

    mu = x.data.mean(axis=(2, 3), keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = scale.data * xhat + shift.data
    scale_data = scale.data

    def _backward(g, needs):
        gx = gscale = gshift = None
        if needs[2]:
            gshift = g.sum(axis=(0, 2, 3), keepdims=True)
        if needs[1]:
            gscale = (g * xhat).sum(axis=(0, 2, 3), keepdims=True)
        if needs[0]:
            dxhat = g * scale_data
            m1 = dxhat.mean(axis=(2, 3), keepdims=True)
            m2 = (dxhat * xhat).mean(axis=(2, 3), keepdims=True)
            gx = inv * (dxhat - m1 - xhat * m2)
        return gx, gscale, gshift

    return record_op((x, scale, shift), out, _backward)


def gram(features: Tensor) -> Tensor:
    """Per-sample channel Gram matrix, normalized by ``c*h*w``.

    Returns dims ``(n, 1, c, c)``. The result is symmetrized exactly, and it
    is positive semi-definite by construction.
    """
    n, c, h, w = features.dims
    if h * w < 1:
        raise ValueError("gram needs at least one spatial element")
    flat = features.data.reshape(n, c, h * w)
    z = 1.0 / (c * h * w)
    g_mat = flat @ flat.transpose(0, 2, 1) * z
    g_mat = 0.5 * (g_mat + g_mat.transpose(0, 2, 1))
    out = g_mat.reshape(n, 1, c, c)

    def _backward(g, needs):
        gm = g.reshape(n, c, c)
        df = (gm + gm.transpose(0, 2, 1)) @ flat * z
        return (df.reshape(n, c, h, w),)

    return record_op((features,), out, _backward)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean of squared elementwise differences, as a scalar tensor."""
    _matching_dtype(a, b)
    if a.dims != b.dims:
        raise ValueError(f"mse dims mismatch: {a.dims} vs {b.dims}")
    diff = a.data - b.data
    out = np.asarray(np.mean(diff * diff), dtype=a.data.dtype).reshape(1, 1, 1, 1)
    inv_n = 1.0 / diff.size

    def _backward(g, needs):
        da = (2.0 * inv_n) * g.reshape(()) * diff
        ga = da if needs[0] else None
        gb = -da if needs[1] else None
        return ga, gb

    return record_op((a, b), out, _backward)


def tv_loss(image: Tensor) -> Tensor:
    """Mean squared forward difference, horizontal plus vertical."""
    n, c, h, w = image.dims
    if h < 2 or w < 2:
        raise ValueError(f"degenerate spatial dims {h}x{w}; need at least 2x2")
    x = image.data
    dh = x[:, :, :, 1:] - x[:, :, :, :-1]
    dv = x[:, :, 1:, :] - x[:, :, :-1, :]
    total = np.sum(dh * dh) + np.sum(dv * dv)
    out = np.asarray(total / x.size, dtype=x.dtype).reshape(1, 1, 1, 1)
    inv_n = 1.0 / x.size

    def _backward(g, needs):
        coef = 2.0 * inv_n * g.reshape(())
        gx = np.zeros_like(x)
        gx[:, :, :, 1:] += coef * dh
        gx[:, :, :, :-1] -= coef * dh
        gx[:, :, 1:, :] += coef * dv
        gx[:, :, :-1, :] -= coef * dv
        return (gx,)

    return record_op((image,), out, _backward)
