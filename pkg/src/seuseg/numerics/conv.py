"""Convolution, pixel shuffle and pooling on NCHW / NCL layouts."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigurationError, DimensionError
from .tape import Var, lift, make

__all__ = [
    "conv1d_depthwise", "conv2d", "conv_transpose2d",
    "pixel_shuffle", "pixel_unshuffle", "avg_pool2d_padded", "conv_output_extent",
]


def conv1d_depthwise(x, kernel, bias=None) -> Var:
    """Same-length depthwise cross-correlation of ``[B, C, N]`` with ``[C, k]`` (k odd, zero padding)."""
    x, kernel = lift(x), lift(kernel)
    b_, c, n = x.shape
    if kernel.ndim != 2 or kernel.shape[0] != c:
        raise DimensionError(f"depthwise kernel {kernel.shape} does not match {c} channels")
    k = kernel.shape[1]
    if k % 2 == 0:
        raise ConfigurationError(f"depthwise conv kernel must be odd, got {k}")
    p = (k - 1) // 2
    xp = np.pad(x.value, ((0, 0), (0, 0), (p, p)))
    kv = kernel.value
    out = np.zeros((b_, c, n))
    for j in range(k):
        out += kv[None, :, j, None] * xp[:, :, j:j + n]
    parents = [x, kernel]
    if bias is not None:
        bias = lift(bias)
        out += bias.value[None, :, None]
        parents.append(bias)

    def backward(g):
        gxp = np.zeros_like(xp)
        gk = np.empty_like(kv)
        for j in range(k):
            gxp[:, :, j:j + n] += kv[None, :, j, None] * g
            gk[:, j] = (g * xp[:, :, j:j + n]).sum(axis=(0, 2))
        grads = [gxp[:, :, p:p + n], gk]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return grads

    return make(out, parents, backward)


def conv_output_extent(n: int, k: int, stride: int, pad: int) -> int:
    span = n + 2 * pad - k
    if span < 0 or span % stride:
        raise ConfigurationError(
            f"conv extent (n={n} + 2*pad={pad} - k={k}) / stride={stride} is not a nonnegative integer")
    return span // stride + 1


def conv2d(x, kernel, bias=None, stride: int = 1, pad: int = 0) -> Var:
    """Cross-correlation ``[B, Cin, H, W] * [Cout, Cin, kh, kw] -> [B, Cout, H', W']``."""
    x, kernel = lift(x), lift(kernel)
    if x.ndim != 4 or kernel.ndim != 4 or kernel.shape[1] != x.shape[1]:
        raise DimensionError(f"conv2d input {x.shape} incompatible with kernel {kernel.shape}")
    bsz, cin, h, w = x.shape
    cout, _, kh, kw = kernel.shape
    ho = conv_output_extent(h, kh, stride, pad)
    wo = conv_output_extent(w, kw, stride, pad)
    xp = np.pad(x.value, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.value
    kv = kernel.value

    if kh == 1 and kw == 1:
        cols = xp[:, :, ::stride, ::stride]
        out = np.tensordot(kv[:, :, 0, 0], cols, axes=([1], [1])).transpose(1, 0, 2, 3)
    else:
        # [B, Cin, Ho, Wo, kh, kw] strided view, no copy until tensordot
        cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        out = np.tensordot(cols, kv, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    parents = [x, kernel]
    if bias is not None:
        bias = lift(bias)
        out += bias.value[None, :, None, None]
        parents.append(bias)

    def backward(g):
        if kh == 1 and kw == 1:
            gk = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))[:, :, None, None]
            gx = np.tensordot(g, kv[:, :, 0, 0], axes=([1], [0])).transpose(0, 3, 1, 2)
            if stride != 1 or pad:
                full = np.zeros(xp.shape)
                full[:, :, ::stride, ::stride][:, :, :ho, :wo] = gx
                gx = full
        else:
            gk = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
            gx = np.zeros(xp.shape)
            for i in range(kh):
                for j in range(kw):
                    contrib = np.tensordot(g, kv[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
                    gx[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += contrib
        if pad:
            gx = gx[:, :, pad:pad + h, pad:pad + w]
        grads = [gx, gk]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return make(out, parents, backward)


def conv_transpose2d(x, kernel, bias=None) -> Var:
    """2x2 / stride-2 transposed convolution ``[B, C, H, W] -> [B, Cout, 2H, 2W]``.

    ``kernel`` is ``[C, Cout, 2, 2]``; the op is the adjoint of the stride-2
    ``conv2d`` with the same kernel read as ``[C, Cout, 2, 2]`` -> ``[Cout_conv=C, Cin_conv=Cout]``.
    """
    x, kernel = lift(x), lift(kernel)
    if kernel.ndim != 4 or kernel.shape[2:] != (2, 2):
        raise ConfigurationError(f"transposed conv kernel must be [C, Cout, 2, 2], got {kernel.shape}")
    if x.ndim != 4 or kernel.shape[0] != x.shape[1]:
        raise DimensionError(f"transposed conv input {x.shape} incompatible with kernel {kernel.shape}")
    bsz, c, h, w = x.shape
    cout = kernel.shape[1]
    xv, kv = x.value, kernel.value
    # [B, H, W, Cout, 2, 2] -> [B, Cout, H, 2, W, 2]
    y6 = np.tensordot(xv, kv, axes=([1], [0])).transpose(0, 3, 1, 4, 2, 5)
    out = np.ascontiguousarray(y6).reshape(bsz, cout, 2 * h, 2 * w)
    parents = [x, kernel]
    if bias is not None:
        bias = lift(bias)
        out += bias.value[None, :, None, None]
        parents.append(bias)

    def backward(g):
        g6 = g.reshape(bsz, cout, h, 2, w, 2)
        gx = np.tensordot(g6, kv, axes=([1, 3, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        gk = np.tensordot(xv, g6, axes=([0, 2, 3], [0, 2, 4]))
        grads = [gx, gk]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return make(out, parents, backward)


def pixel_shuffle(x, r: int) -> Var:
    """``[B, C*r*r, H, W] -> [B, C, rH, rW]``; channel ``c*r*r + i*r + j`` lands at offset ``(i, j)``."""
    x = lift(x)
    bsz, cr, h, w = x.shape
    if cr % (r * r):
        raise ConfigurationError(f"pixel_shuffle: {cr} channels not divisible by r^2={r * r}")
    c = cr // (r * r)
    out = x.value.reshape(bsz, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(bsz, c, h * r, w * r)

    def backward(g):
        return (g.reshape(bsz, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(bsz, cr, h, w),)

    return make(out, (x,), backward)


def pixel_unshuffle(x, r: int) -> Var:
    """Inverse of :func:`pixel_shuffle`."""
    x = lift(x)
    bsz, c, hr, wr = x.shape
    if hr % r or wr % r:
        raise ConfigurationError(f"pixel_unshuffle: extents {hr}x{wr} not divisible by r={r}")
    h, w = hr // r, wr // r
    out = x.value.reshape(bsz, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(bsz, c * r * r, h, w)

    def backward(g):
        return (g.reshape(bsz, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(bsz, c, hr, wr),)

    return make(out, (x,), backward)


def avg_pool2d_padded(x, o: int) -> Var:
    """Shape-preserving ``o x o`` mean filter; zero padding counts toward the divisor."""
    x = lift(x)
    if o % 2 == 0 or o < 1:
        raise ConfigurationError(f"avg pool kernel must be odd and positive, got {o}")
    if o == 1:
        return make(x.value.copy(), (x,), lambda g: (g,))
    p = (o - 1) // 2
    bsz, c, h, w = x.shape
    xp = np.pad(x.value, ((0, 0), (0, 0), (p, p), (p, p)))
    # separable box filter: rows then columns
    cs = np.cumsum(np.pad(xp, ((0, 0), (0, 0), (1, 0), (0, 0))), axis=2)
    rows = cs[:, :, o:, :] - cs[:, :, :-o, :]
    cs = np.cumsum(np.pad(rows, ((0, 0), (0, 0), (0, 0), (1, 0))), axis=3)
    out = (cs[:, :, :, o:] - cs[:, :, :, :-o]) / (o * o)

    def backward(g):
        gp = np.zeros((bsz, c, h + 2 * p, w + 2 * p))
        for i in range(o):
            for j in range(o):
                gp[:, :, i:i + h, j:j + w] += g
        return (gp[:, :, p:p + h, p:p + w] / (o * o),)

    return make(out, (x,), backward)
