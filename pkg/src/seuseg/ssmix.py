"""State Space Mixer: gated depthwise-conv branches around a selective diagonal state-space scan.

Data flow for ``t_in: [B, N, D]``::

    Linear(D -> 2*d_inner) -> transpose -> split P, Q
    P~ = tanh(dwconv_x(P)),  Q~ = tanh(dwconv_z(Q))
    [delta_raw | Bt | Ct] = Linear(P~)          # per timestep
    delta = softplus(delta_raw + bias_delta)
    SCAN = selective_scan(P~, delta, A, Bt, Ct, E)
    out = Linear(concat(SCAN, Q~))              # [B, N, Y]
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError
from .numerics import (
    Var,
    add,
    concat,
    conv1d_depthwise,
    exp,
    matmul,
    neg,
    reshape,
    softplus,
    split,
    tanh,
    transpose,
)
from .numerics.tape import lift, make
from .params import ParamGroup, glorot, param, zeros


@dataclass(frozen=True)
class SSMixConfig:
    d_model: int
    d_out: int
    expand: int = 2
    d_state: int = 8
    kernel: int = 3

    def __post_init__(self):
        if not isinstance(self.expand, int) or self.expand < 1:
            raise ConfigurationError(f"expansion factor must be an integer >= 1, got {self.expand}")
        if self.kernel % 2 == 0:
            raise ConfigurationError(f"depthwise kernel must be odd, got {self.kernel}")
        if min(self.d_model, self.d_out, self.d_state) < 1:
            raise ConfigurationError("d_model, d_out and d_state must be >= 1")

    @property
    def d_inner(self) -> int:
        return self.expand * self.d_model


def _inverse_softplus(y: np.ndarray) -> np.ndarray:
    return y + np.log(-np.expm1(-y))


@dataclass
class SSMixParams(ParamGroup):
    w_in: Var          # [D, 2*d_inner]
    b_in: Var          # [2*d_inner]
    conv_x: Var        # [d_inner, k]
    conv_x_bias: Var   # [d_inner]
    conv_z: Var        # [d_inner, k]
    conv_z_bias: Var   # [d_inner]
    w_dbc: Var         # [d_inner, d_inner + 2*d_state]
    bias_delta: Var    # [d_inner]
    a_log: Var         # [d_inner, d_state], A = -exp(a_log)
    e: Var             # [d_inner] skip gate
    w_out: Var         # [2*d_inner, Y]
    b_out: Var         # [Y]

    @classmethod
    def init(cls, rng: np.random.Generator, cfg: SSMixConfig) -> "SSMixParams":
        di, ds, k = cfg.d_inner, cfg.d_state, cfg.kernel
        dt = np.exp(rng.uniform(math.log(1e-3), math.log(1e-1), size=di))
        return cls(
            w_in=glorot(rng, cfg.d_model, 2 * di, (cfg.d_model, 2 * di)),
            b_in=zeros(2 * di),
            conv_x=param(rng.normal(0.0, 1.0 / math.sqrt(k), size=(di, k))),
            conv_x_bias=zeros(di),
            conv_z=param(rng.normal(0.0, 1.0 / math.sqrt(k), size=(di, k))),
            conv_z_bias=zeros(di),
            w_dbc=glorot(rng, di, di + 2 * ds, (di, di + 2 * ds)),
            bias_delta=param(_inverse_softplus(dt)),
            a_log=param(np.tile(np.log(np.arange(1, ds + 1, dtype=np.float64)), (di, 1))),
            e=param(np.ones(di)),
            w_out=glorot(rng, 2 * di, cfg.d_out, (2 * di, cfg.d_out)),
            b_out=zeros(cfg.d_out),
        )

    def transition(self) -> Var:
        """Diagonal state transition ``A = -exp(a_log)``, strictly negative."""
        return neg(exp(self.a_log))


def delta_reparam(raw, bias_delta) -> Var:
    """Positive step sizes ``softplus(raw + bias)`` for ``raw: [B, d_inner, N]``."""
    bias_delta = lift(bias_delta)
    return softplus(add(raw, reshape(bias_delta, (bias_delta.shape[0], 1))))


def _check_scan_shapes(u, delta, a, bt, ct, e):
    bsz, di, n = u.shape
    ds = a.shape[1]
    if delta.shape != u.shape:
        raise DimensionError(f"delta {delta.shape} must match u {u.shape}")
    if a.shape != (di, ds) or e.shape != (di,):
        raise DimensionError(f"A {a.shape} / E {e.shape} inconsistent with d_inner={di}")
    if bt.shape != (bsz, ds, n) or ct.shape != (bsz, ds, n):
        raise DimensionError(f"Bt {bt.shape} / Ct {ct.shape} must be {(bsz, ds, n)}")
    if np.any(delta.value < 0):
        raise ContractError("selective scan requires nonnegative step sizes delta")


def selective_scan(u, delta, a, bt, ct, e) -> Var:
    """Selective diagonal SSM, one left-to-right pass over time.

    For channel c, state s, time t (h before t=0 is zero)::

        h[c,s,t] = exp(delta[c,t] * A[c,s]) * h[c,s,t-1] + delta[c,t] * Bt[s,t] * u[c,t]
        y[c,t]   = sum_s Ct[s,t] * h[c,s,t] + E[c] * u[c,t]

    Shapes: ``u, delta: [B, d_inner, N]``, ``A: [d_inner, d_state]``,
    ``Bt, Ct: [B, d_state, N]``, ``E: [d_inner]``. The full state trajectory is
    kept for the backward pass.
    """
    u, delta, a, bt, ct, e = (lift(v) for v in (u, delta, a, bt, ct, e))
    _check_scan_shapes(u, delta, a, bt, ct, e)
    uv, dv, av, bv, cv, ev = u.value, delta.value, a.value, bt.value, ct.value, e.value
    bsz, di, n = uv.shape
    ds = av.shape[1]

    decay = np.exp(dv[:, :, None, :] * av[None, :, :, None])          # [B, D, S, N]
    drive = (dv * uv)[:, :, None, :] * bv[:, None, :, :]              # [B, D, S, N]
    hs = np.empty((bsz, di, ds, n))
    h = np.zeros((bsz, di, ds))
    for t in range(n):
        h = decay[..., t] * h + drive[..., t]
        hs[..., t] = h
    y = np.einsum("bdsn,bsn->bdn", hs, cv) + ev[None, :, None] * uv

    def backward(gy):
        gc = np.einsum("bdn,bdsn->bsn", gy, hs)
        ge = (gy * uv).sum(axis=(0, 2))
        gu = gy * ev[None, :, None]
        gdecay = np.empty_like(hs)
        gdrive = np.empty_like(hs)
        carry = np.zeros((bsz, di, ds))
        for t in range(n - 1, -1, -1):
            gh = gy[:, :, None, t] * cv[:, None, :, t] + carry
            gdrive[..., t] = gh
            gdecay[..., t] = gh * hs[..., t - 1] if t > 0 else 0.0
            carry = gh * decay[..., t]
        gz = gdecay * decay                                           # wrt delta*A
        gd = (gz * av[None, :, :, None]).sum(axis=2)
        ga = (gz * dv[:, :, None, :]).sum(axis=(0, 3))
        gdu = (gdrive * bv[:, None, :, :]).sum(axis=2)                # wrt delta*u
        gd = gd + gdu * uv
        gu = gu + gdu * dv
        gb = (gdrive * (dv * uv)[:, :, None, :]).sum(axis=1)
        return gu, gd, ga, gb, gc, ge

    return make(y, (u, delta, a, bt, ct, e), backward)


def selective_scan_oracle(u, delta, a, bt, ct, e) -> np.ndarray:
    """Reference scan: explicit per-(batch, channel) state vectors, scalar loops, no vectorization."""
    u, delta, a, bt, ct, e = (lift(v) for v in (u, delta, a, bt, ct, e))
    _check_scan_shapes(u, delta, a, bt, ct, e)
    uv, dv, av, bv, cv, ev = u.value, delta.value, a.value, bt.value, ct.value, e.value
    bsz, di, n = uv.shape
    ds = av.shape[1]
    y = np.zeros((bsz, di, n))
    for b in range(bsz):
        for c in range(di):
            state = [0.0] * ds
            for t in range(n):
                for s in range(ds):
                    state[s] = math.exp(dv[b, c, t] * av[c, s]) * state[s] + dv[b, c, t] * bv[b, s, t] * uv[b, c, t]
                out = 0.0
                for s in range(ds):
                    out += cv[b, s, t] * state[s]
                y[b, c, t] = out + ev[c] * uv[b, c, t]
    return y


def ssmix_forward(t_in: Var, cfg: SSMixConfig, p: SSMixParams) -> Var:
    """``[B, N, D] -> [B, N, Y]``."""
    t_in = lift(t_in)
    if t_in.ndim != 3 or t_in.shape[2] != cfg.d_model:
        raise DimensionError(f"SSMix input {t_in.shape} does not match d_model={cfg.d_model}")
    di, ds = cfg.d_inner, cfg.d_state
    th = add(matmul(t_in, p.w_in), p.b_in)                 # [B, N, 2*di]
    pq = transpose(th, (0, 2, 1))                           # [B, 2*di, N]
    p_branch, q_branch = split(pq, [di, di], axis=1)
    p_t = tanh(conv1d_depthwise(p_branch, p.conv_x, p.conv_x_bias))
    q_t = tanh(conv1d_depthwise(q_branch, p.conv_z, p.conv_z_bias))
    dbc = transpose(matmul(transpose(p_t, (0, 2, 1)), p.w_dbc), (0, 2, 1))  # [B, di+2ds, N]
    delta_raw, b_t, c_t = split(dbc, [di, ds, ds], axis=1)
    delta = delta_reparam(delta_raw, p.bias_delta)
    scan = selective_scan(p_t, delta, p.transition(), b_t, c_t, p.e)
    mixed = transpose(concat([scan, q_t], axis=1), (0, 2, 1))  # [B, N, 2*di]
    return add(matmul(mixed, p.w_out), p.b_out)


@dataclass
class LinearMixerParams(ParamGroup):
    """Drop-in replacement for SSMix: one linear map of matching width."""

    w: Var
    b: Var

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_out: int) -> "LinearMixerParams":
        return cls(w=glorot(rng, d_in, d_out, (d_in, d_out)), b=zeros(d_out))


def linear_mixer_forward(t_in: Var, p: LinearMixerParams) -> Var:
    return add(matmul(t_in, p.w), p.b)
