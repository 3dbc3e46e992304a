"""Radix-2 Cooley-Tukey FFT and the differentiable 2-D spectrum magnitude."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from ..errors import ConfigurationError
from .tape import Var, lift, make

__all__ = ["fft_axis", "fft2", "dft2_magnitude", "is_power_of_two"]


def is_power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


@lru_cache(maxsize=None)
def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=None)
def _twiddles(size: int) -> np.ndarray:
    return np.exp(-2j * np.pi * np.arange(size // 2) / size)


def fft_axis(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Unnormalized forward DFT along ``axis`` by iterative decimation in time."""
    x = np.moveaxis(np.asarray(x, dtype=np.complex128), axis, -1)
    n = x.shape[-1]
    if not is_power_of_two(n):
        raise ConfigurationError(f"FFT extent {n} is not a power of two; zero-pad the input first")
    lead = x.shape[:-1]
    x = x[..., _bit_reverse(n)]
    size = 2
    while size <= n:
        half = size // 2
        blocks = x.reshape(*lead, n // size, size)
        even = blocks[..., :half]
        odd = blocks[..., half:] * _twiddles(size)
        x = np.concatenate([even + odd, even - odd], axis=-1).reshape(*lead, n)
        size *= 2
    return np.moveaxis(x, -1, axis)


def fft2(x: np.ndarray) -> np.ndarray:
    """2-D DFT over the last two axes."""
    return fft_axis(fft_axis(x, -1), -2)


def dft2_magnitude(x) -> Var:
    """``|F(x)|`` per channel for real ``[..., H, W]`` input, H and W powers of two.

    The backward pass uses ``d|F_k|/dx_n = Re(conj(F_k) w^{kn}) / |F_k|``, which
    is itself a forward DFT of ``g * conj(F) / |F|``; bins with ``|F| = 0``
    take the zero subgradient.
    """
    x = lift(x)
    h, w = x.shape[-2:]
    if not (is_power_of_two(h) and is_power_of_two(w)):
        raise ConfigurationError(f"spectrum extents {h}x{w} must be powers of two; zero-pad the input first")
    freq = fft2(x.value)
    mag = np.abs(freq)

    def backward(g):
        with np.errstate(invalid="ignore", divide="ignore"):
            z = np.where(mag > 0, g * np.conj(freq) / mag, 0.0)
        return (fft2(z).real,)

    return make(mag, (x,), backward)
