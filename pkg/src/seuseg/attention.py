"""Sinusoidal positions and multi-head self / cross attention over token sequences ``[B, T, d]``."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimensionError
from .numerics import Var, add, matmul, mul, reshape, softmax, transpose
from .params import ParamGroup, glorot


@lru_cache(maxsize=64)
def sinusoidal_table(length: int, d: int) -> np.ndarray:
    """``PE[t, 2i] = sin(t / 10000^(2i/d))``, ``PE[t, 2i+1] = cos(...)``.

    For odd ``d`` the last column is a sine without a cosine partner.
    """
    t = np.arange(length, dtype=np.float64)[:, None]
    i2 = np.arange(0, d, 2, dtype=np.float64)
    angles = t / np.power(10000.0, i2 / d)
    pe = np.zeros((length, d))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : d // 2])
    pe.setflags(write=False)
    return pe


def sinusoidal_pe(x: Var) -> Var:
    """Add the fixed positional table along the token axis of ``[B, T, d]``."""
    _, t, d = x.shape
    return add(x, sinusoidal_table(t, d))


@dataclass
class AttnParams(ParamGroup):
    """Per-head projections ``w_q/w_k/w_v: [h, d_feat, d_k]`` and output ``w_o: [h*d_k, d_feat]``."""

    w_q: Var
    w_k: Var
    w_v: Var
    w_o: Var

    @classmethod
    def init(cls, rng: np.random.Generator, d_feat: int, heads: int, d_k: int | None = None) -> "AttnParams":
        d_k = d_k or max(1, d_feat // heads)
        return cls(
            w_q=glorot(rng, d_feat, d_k, (heads, d_feat, d_k)),
            w_k=glorot(rng, d_feat, d_k, (heads, d_feat, d_k)),
            w_v=glorot(rng, d_feat, d_k, (heads, d_feat, d_k)),
            w_o=glorot(rng, heads * d_k, d_feat, (heads * d_k, d_feat)),
        )

    @property
    def heads(self) -> int:
        return self.w_q.shape[0]

    @property
    def d_k(self) -> int:
        return self.w_q.shape[2]

    @property
    def d_feat(self) -> int:
        return self.w_q.shape[1]


def _attend(q_src: Var, k_src: Var, v_src: Var, p: AttnParams, return_weights: bool):
    bsz, tq, d = q_src.shape
    if d != p.d_feat or k_src.shape[-1] != d or v_src.shape[-1] != d:
        raise DimensionError(
            f"attention feature width mismatch: q {q_src.shape}, k {k_src.shape}, v {v_src.shape}, "
            f"params d_feat={p.d_feat}")
    # [B, 1, T, d] @ [h, d, d_k] -> [B, h, T, d_k]
    q = matmul(reshape(q_src, (bsz, 1, tq, d)), p.w_q)
    k = matmul(reshape(k_src, (bsz, 1, k_src.shape[1], d)), p.w_k)
    v = matmul(reshape(v_src, (bsz, 1, v_src.shape[1], d)), p.w_v)
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(p.d_k))
    weights = softmax(scores, axis=-1)
    heads = matmul(weights, v)  # [B, h, Tq, d_k]
    merged = reshape(transpose(heads, (0, 2, 1, 3)), (bsz, tq, p.heads * p.d_k))
    out = matmul(merged, p.w_o)
    if return_weights:
        return out, weights.value
    return out


def mhsa(x: Var, p: AttnParams, return_weights: bool = False):
    """Unmasked multi-head self-attention; the caller owns normalization and residuals."""
    return _attend(x, x, x, p, return_weights)


def mhca(q_src: Var, kv_src: Var, p: AttnParams, key_pe: bool = True, return_weights: bool = False):
    """Multi-head cross-attention: queries from ``q_src``, keys ``SPE(kv_src)``, values ``kv_src``.

    Attention weights are normalized over the ``kv_src`` token axis.
    """
    if q_src.shape[0] != kv_src.shape[0]:
        raise DimensionError(f"batch mismatch: {q_src.shape} vs {kv_src.shape}")
    keys = sinusoidal_pe(kv_src) if key_pe else kv_src
    return _attend(q_src, keys, kv_src, p, return_weights)


__all__ = ["AttnParams", "sinusoidal_table", "sinusoidal_pe", "mhsa", "mhca"]
