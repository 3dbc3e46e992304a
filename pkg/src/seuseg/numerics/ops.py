"""Differentiable tensor operations (elementwise, linear algebra, normalization)."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from ..errors import ConfigurationError, DimensionError
from . import gradcheck
from .tape import Var, lift, make

__all__ = [
    "add", "sub", "mul", "div", "neg", "exp", "log", "square", "sqrt",
    "matmul", "sum", "mean", "reshape", "transpose", "getitem", "concat", "split",
    "softmax", "softmax_lastdim", "layer_norm", "batch_norm",
    "gelu", "leaky_relu", "tanh", "sigmoid", "softplus", "activation",
]

# ---------------------------------------------------------------- elementwise


def add(a, b) -> Var:
    a, b = lift(a), lift(b)
    return make(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b) -> Var:
    a, b = lift(a), lift(b)
    return make(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b) -> Var:
    a, b = lift(a), lift(b)
    av, bv = a.value, b.value
    return make(av * bv, (a, b), lambda g: (g * bv, g * av))


def div(a, b) -> Var:
    a, b = lift(a), lift(b)
    av, bv = a.value, b.value
    out = av / bv
    return make(out, (a, b), lambda g: (g / bv, -g * out / bv))


def neg(a) -> Var:
    a = lift(a)
    return make(-a.value, (a,), lambda g: (-g,))


def exp(a) -> Var:
    a = lift(a)
    out = np.exp(a.value)
    return make(out, (a,), lambda g: (g * out,))


def log(a) -> Var:
    a = lift(a)
    av = a.value
    return make(np.log(av), (a,), lambda g: (g / av,))


def square(a) -> Var:
    a = lift(a)
    av = a.value
    return make(av * av, (a,), lambda g: (2.0 * g * av,))


def sqrt(a) -> Var:
    a = lift(a)
    out = np.sqrt(a.value)
    return make(out, (a,), lambda g: (0.5 * g / out,))


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Var:
    """Batched matrix product ``[..., M, K] @ [..., K, P]`` with broadcast batch prefixes."""
    a, b = lift(a), lift(b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2 or av.shape[-1] != bv.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")
    try:
        out = np.matmul(av, bv)
    except ValueError as exc:
        raise DimensionError(f"matmul batch prefixes not broadcastable: {av.shape} @ {bv.shape}") from exc

    def backward(g):
        return np.matmul(g, np.swapaxes(bv, -1, -2)), np.matmul(np.swapaxes(av, -1, -2), g)

    return make(out, (a, b), backward)


# ---------------------------------------------------------------- reductions


def sum(a, axis=None, keepdims: bool = False) -> Var:  # noqa: A001 - mirrors numpy
    a = lift(a)
    shape = a.shape
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return make(out, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Var:
    a = lift(a)
    n = a.value.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------- shape manipulation


def reshape(a, shape) -> Var:
    a = lift(a)
    src = a.shape
    return make(a.value.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a, axes=None) -> Var:
    a = lift(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return make(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, index) -> Var:
    a = lift(a)
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return make(a.value[index], (a,), backward)


def concat(items, axis: int = 0) -> Var:
    items = [lift(x) for x in items]
    sizes = [x.shape[axis] for x in items]
    bounds = np.cumsum(sizes)[:-1]
    out = np.concatenate([x.value for x in items], axis=axis)
    return make(out, items, lambda g: tuple(np.split(g, bounds, axis=axis)))


def split(a, sizes, axis: int = 0) -> list[Var]:
    """Split along ``axis`` into consecutive pieces of the given extents."""
    a = lift(a)
    if np.sum(sizes) != a.shape[axis]:
        raise DimensionError(f"split sizes {list(sizes)} do not cover extent {a.shape[axis]}")
    out, start = [], 0
    ax = axis % a.ndim
    for n in sizes:
        index = (slice(None),) * ax + (slice(start, start + n),)
        out.append(_slice(a, index))
        start += n
    return out


def _slice(a: Var, index) -> Var:
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return make(a.value[index], (a,), backward)


# ---------------------------------------------------------------- softmax / norms


def softmax(a, axis: int = -1) -> Var:
    a = lift(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make(out, (a,), backward)


def softmax_lastdim(a) -> Var:
    return softmax(a, axis=-1)


LN_EPS = 1e-5


def layer_norm(x, gain, bias, axis: int = -1, eps: float = LN_EPS) -> Var:
    """Normalize each slice along ``axis`` to zero mean / unit variance, then affine.

    ``gain`` and ``bias`` have the extent of ``axis`` and broadcast over the rest.
    """
    x, gain, bias = lift(x), lift(gain), lift(bias)
    ax = axis % x.ndim
    n = x.shape[ax]
    if gain.shape != (n,) or bias.shape != (n,):
        raise DimensionError(f"layer_norm affine shapes {gain.shape}/{bias.shape} != ({n},)")
    bshape = [1] * x.ndim
    bshape[ax] = n
    gv = gain.value.reshape(bshape)
    bv = bias.value.reshape(bshape)

    mu = x.value.mean(axis=ax, keepdims=True)
    xc = x.value - mu
    var = (xc * xc).mean(axis=ax, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gv + bv
    red = tuple(i for i in range(x.ndim) if i != ax)

    def backward(g):
        gx_hat = g * gv
        gx = inv * (gx_hat - gx_hat.mean(axis=ax, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=ax, keepdims=True))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return make(out, (x, gain, bias), backward)


def batch_norm(x, gain, bias, running=None, training: bool = True,
               momentum: float = 0.1, eps: float = LN_EPS) -> Var:
    """Per-channel normalization of ``[B, C, H, W]`` over (B, H, W).

    ``running`` is an optional ``(mean, var)`` pair of arrays updated in place
    when training and used for normalization otherwise.
    """
    x, gain, bias = lift(x), lift(gain), lift(bias)
    c = x.shape[1]
    gv = gain.value.reshape(1, c, 1, 1)
    bv = bias.value.reshape(1, c, 1, 1)
    red = (0, 2, 3)
    if training or running is None:
        mu = x.value.mean(axis=red, keepdims=True)
        xc = x.value - mu
        var = (xc * xc).mean(axis=red, keepdims=True)
        if training and running is not None:
            m = x.value.size // c
            running[0][...] = (1 - momentum) * running[0] + momentum * mu.ravel()
            running[1][...] = (1 - momentum) * running[1] + momentum * var.ravel() * m / max(m - 1, 1)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv

        def backward(g):
            gx_hat = g * gv
            gx = inv * (gx_hat - gx_hat.mean(axis=red, keepdims=True)
                        - xhat * (gx_hat * xhat).mean(axis=red, keepdims=True))
            return gx, (g * xhat).sum(axis=red), g.sum(axis=red)
    else:
        inv = 1.0 / np.sqrt(running[1].reshape(1, c, 1, 1) + eps)
        xhat = (x.value - running[0].reshape(1, c, 1, 1)) * inv

        def backward(g):
            return g * gv * inv, (g * xhat).sum(axis=red), g.sum(axis=red)

    return make(xhat * gv + bv, (x, gain, bias), backward)


# ---------------------------------------------------------------- activations

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
SOFTPLUS_LINEAR_ABOVE = 30.0


def gelu(a) -> Var:
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF via erf."""
    a = lift(a)
    x = a.value
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return make(x * cdf, (a,), lambda g: (g * (cdf + x * pdf),))


def leaky_relu(a, slope: float = 0.01) -> Var:
    a = lift(a)
    x = a.value
    pos = x > 0
    gradcheck.record_kink_pattern(pos)
    d = np.where(pos, 1.0, slope)
    return make(x * d, (a,), lambda g: (g * d,))


def tanh(a) -> Var:
    a = lift(a)
    out = np.tanh(a.value)
    return make(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Var:
    a = lift(a)
    out = _sigmoid(a.value)
    return make(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Var:
    """``log(1 + e^x)``; returns ``x`` itself above a cutoff where the two agree in f64."""
    a = lift(a)
    x = a.value
    big = x > SOFTPLUS_LINEAR_ABOVE
    out = np.where(big, x, np.log1p(np.exp(np.minimum(x, SOFTPLUS_LINEAR_ABOVE))))
    s = _sigmoid(x)
    return make(out, (a,), lambda g: (g * s,))


_ACTIVATIONS = {
    "gelu": gelu,
    "leaky_relu": leaky_relu,
    "tanh": tanh,
    "softplus": softplus,
    "sigmoid": sigmoid,
}


def activation(x, kind: str) -> Var:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigurationError(f"unknown activation {kind!r}; choose from {sorted(_ACTIVATIONS)}") from None
    return fn(x)
