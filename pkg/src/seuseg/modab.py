"""Modality Decoding Attention Block: fuse visual tokens with state-space-mixed text.

Visual input ``x: [B, C, Y]`` is read as C tokens (channels) of width Y (the
flattened spatial extent), so projected text of width Y can be attended to
without further projections.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttnParams, mhca, mhsa, sinusoidal_pe
from .errors import DimensionError
from .numerics import Var, add, gelu, layer_norm, leaky_relu, matmul, mean, mul
from .numerics.tape import lift
from .params import ParamGroup, glorot, ones, param, zeros
from .ssmix import LinearMixerParams, SSMixConfig, SSMixParams, linear_mixer_forward, ssmix_forward


@dataclass
class ModabParams(ParamGroup):
    text_proj: Var                       # [D_text, Y]
    text_proj_b: Var                     # [Y]
    mixer: SSMixParams | LinearMixerParams
    self_attn: AttnParams
    cross_attn: AttnParams | None        # None for the additive-fusion ablation
    ln_in_g: Var
    ln_in_b: Var
    ln_sa_g: Var
    ln_sa_b: Var
    ln_q_g: Var
    ln_q_b: Var
    ln_ca_g: Var
    ln_ca_b: Var
    alpha: Var                           # scalar gate

    @classmethod
    def init(cls, rng: np.random.Generator, d_text: int, width: int, heads: int,
             expand: int = 2, d_state: int = 8, kernel: int = 3, arch: str = "full") -> "ModabParams":
        if arch == "ssmix_linear":
            mixer = LinearMixerParams.init(rng, width, width)
        else:
            mixer = SSMixParams.init(rng, SSMixConfig(width, width, expand, d_state, kernel))
        return cls(
            text_proj=glorot(rng, d_text, width, (d_text, width)),
            text_proj_b=zeros(width),
            mixer=mixer,
            self_attn=AttnParams.init(rng, width, heads),
            cross_attn=None if arch == "crossattn_add" else AttnParams.init(rng, width, heads),
            ln_in_g=ones(width), ln_in_b=zeros(width),
            ln_sa_g=ones(width), ln_sa_b=zeros(width),
            ln_q_g=ones(width), ln_q_b=zeros(width),
            ln_ca_g=ones(width), ln_ca_b=zeros(width),
            alpha=param(rng.uniform(0.0, 0.1)),
        )

    @property
    def width(self) -> int:
        return self.text_proj.shape[1]

    @property
    def arch(self) -> str:
        if isinstance(self.mixer, LinearMixerParams):
            return "ssmix_linear"
        return "crossattn_add" if self.cross_attn is None else "full"

    def mixer_config(self) -> SSMixConfig:
        m = self.mixer
        di, k = m.conv_x.shape
        return SSMixConfig(d_model=m.w_in.shape[0], d_out=m.w_out.shape[1],
                           expand=di // m.w_in.shape[0], d_state=m.a_log.shape[1], kernel=k)


def text_projection_path(t: Var, p: ModabParams) -> Var:
    """``GELU(SSMix(LeakyReLU(Linear(t))))``: ``[B, N, D_text] -> [B, N, Y]``."""
    t = lift(t)
    if t.ndim != 3 or t.shape[2] != p.text_proj.shape[0]:
        raise DimensionError(f"text input {t.shape} does not match projection {p.text_proj.shape}")
    h = leaky_relu(add(matmul(t, p.text_proj), p.text_proj_b))
    if isinstance(p.mixer, LinearMixerParams):
        h = linear_mixer_forward(h, p.mixer)
    else:
        h = ssmix_forward(h, p.mixer_config(), p.mixer)
    return gelu(h)


def modab_forward(x: Var, t: Var, p: ModabParams, return_attention: bool = False):
    """Fuse ``x: [B, C, Y]`` with text ``t: [B, N, D_text]``; returns ``F: [B, C, Y]``.

    ::

        X'   = SPE(LN(X))
        X_SA = X' + LN(SelfAttn(X'))
        X_CA = CrossAttn(Q=SPE(LN(X_SA)), K=SPE(T), V=T)   with T the mixed text
        F    = X + alpha * LN(X_CA)

    The final residual adds to the block input ``X``, so ``alpha == 0`` returns
    ``X`` exactly.
    """
    x = lift(x)
    if x.ndim != 3 or x.shape[2] != p.width:
        raise DimensionError(f"visual tokens {x.shape} do not match text width {p.width}")
    text = text_projection_path(t, p)
    x1 = sinusoidal_pe(layer_norm(x, p.ln_in_g, p.ln_in_b))
    x_sa = add(x1, layer_norm(mhsa(x1, p.self_attn), p.ln_sa_g, p.ln_sa_b))
    q = sinusoidal_pe(layer_norm(x_sa, p.ln_q_g, p.ln_q_b))
    weights = None
    if p.cross_attn is None:
        x_ca = add(q, mean(text, axis=1, keepdims=True))
    elif return_attention:
        x_ca, weights = mhca(q, text, p.cross_attn, return_weights=True)
    else:
        x_ca = mhca(q, text, p.cross_attn)
    out = add(x, mul(p.alpha, layer_norm(x_ca, p.ln_ca_g, p.ln_ca_b)))
    if return_attention:
        return out, weights
    return out
