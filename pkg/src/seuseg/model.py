"""End-to-end segmenter: stand-in encoders, MoDAB fusion and the upsampling decoder.

Pipeline for ``img: [B, 3, H, W]`` and ``token_ids: [B, N]``::

    I'_1..I'_4 = image encoder (H/4 .. H/32)
    T'         = frozen text table lookup
    F          = MoDAB(I'_4 flattened to [B, C4, H4*W4], T')      (F := I'_4 when bypassed)
    D          = 3 x (up 2x -> concat skip -> CRB)                 ends at H/4 with C1 channels
    Y          = softmax_c(conv1x1(avgpool_o(pixel_shuffle_r(conv3x3(D)))))
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .data.vocab import PAD_ID, VOCAB
from .errors import DataError, DimensionError
from .modab import ModabParams, modab_forward
from .numerics import (
    Var,
    avg_pool2d_padded,
    batch_norm,
    concat,
    conv2d,
    conv_transpose2d,
    gelu,
    layer_norm,
    leaky_relu,
    pixel_shuffle,
    reshape,
    softmax,
)
from .numerics.tape import as_tensor, lift
from .params import ParamGroup, he_normal, ones, zeros

STEM_STRIDE = 4
STAGE_STRIDE = 2


@dataclass
class EncoderStageParams(ParamGroup):
    kernel: Var   # [C_out, C_in, s, s], stride s
    bias: Var
    ln_g: Var
    ln_b: Var

    @classmethod
    def init(cls, rng, c_in: int, c_out: int, stride: int) -> "EncoderStageParams":
        return cls(he_normal(rng, c_in * stride * stride, (c_out, c_in, stride, stride)),
                   zeros(c_out), ones(c_out), zeros(c_out))


@dataclass
class NormParams(ParamGroup):
    g: Var
    b: Var
    running_mean: Var | None = None   # batch-norm buffers only
    running_var: Var | None = None

    @classmethod
    def init(cls, c: int, kind: str) -> "NormParams":
        if kind == "batch":
            return cls(ones(c), zeros(c), Var(np.zeros(c)), Var(np.ones(c)))
        return cls(ones(c), zeros(c))


def channel_norm(x: Var, p: NormParams, training: bool) -> Var:
    if p.running_mean is None:
        return layer_norm(x, p.g, p.b, axis=1)
    return batch_norm(x, p.g, p.b, running=(p.running_mean.value, p.running_var.value), training=training)


@dataclass
class DecoderStageParams(ParamGroup):
    up_kernel: Var    # [C_in, C_skip, 2, 2]
    up_bias: Var
    conv1: Var        # [C_skip, 2*C_skip, 3, 3]
    conv1_b: Var
    norm1: NormParams
    conv2: Var        # [C_skip, C_skip, 3, 3]
    conv2_b: Var
    norm2: NormParams

    @classmethod
    def init(cls, rng, c_in: int, c_skip: int, norm: str) -> "DecoderStageParams":
        return cls(
            up_kernel=he_normal(rng, c_in * 4, (c_in, c_skip, 2, 2)),
            up_bias=zeros(c_skip),
            conv1=he_normal(rng, 2 * c_skip * 9, (c_skip, 2 * c_skip, 3, 3)),
            conv1_b=zeros(c_skip),
            norm1=NormParams.init(c_skip, norm),
            conv2=he_normal(rng, c_skip * 9, (c_skip, c_skip, 3, 3)),
            conv2_b=zeros(c_skip),
            norm2=NormParams.init(c_skip, norm),
        )


@dataclass
class ModelParams(ParamGroup):
    config: ModelConfig
    encoder: list
    text_table: Var           # frozen [vocab, D_text]
    modab: list               # empty (bypass), one block (stage 4) or four (all stages)
    decoder: list             # three stages, deepest first
    sun_kernel: Var           # [C_o*r*r, C_1, 3, 3]
    sun_bias: Var
    head_kernel: Var          # [C_o, C_o, 1, 1]
    head_bias: Var

    @classmethod
    def init(cls, cfg: ModelConfig) -> "ModelParams":
        rng = np.random.default_rng(cfg.init_seed)
        ch = cfg.channels
        encoder = [EncoderStageParams.init(rng, 3, ch[0], STEM_STRIDE)]
        encoder += [EncoderStageParams.init(rng, ch[i - 1], ch[i], STAGE_STRIDE) for i in range(1, 4)]
        stages = range(4) if cfg.modab_all_stages else [3]
        modab = []
        if cfg.modab:
            modab = [ModabParams.init(rng, cfg.d_text, cfg.stage_sizes[i] ** 2, cfg.heads, cfg.ssmix_expand,
                                      cfg.ssmix_state, cfg.ssmix_kernel, cfg.arch) for i in stages]
        decoder = [DecoderStageParams.init(rng, ch[3 - m], ch[2 - m], cfg.crb_norm) for m in range(3)]
        co, r = cfg.out_classes, cfg.shuffle_factor
        return cls(
            config=cfg,
            encoder=encoder,
            text_table=text_embedding_table(VOCAB.size, cfg.d_text, cfg.text_seed),
            modab=modab,
            decoder=decoder,
            sun_kernel=he_normal(rng, ch[0] * 9, (co * r * r, ch[0], 3, 3)),
            sun_bias=zeros(co * r * r),
            head_kernel=he_normal(rng, co, (co, co, 1, 1)),
            head_bias=zeros(co),
        )


@dataclass
class EncoderFeatures:
    stages: list   # four Vars [B, C_i, H_i, W_i]

    def __getitem__(self, i: int) -> Var:
        return self.stages[i]

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        return [s.shape for s in self.stages]


def text_embedding_table(vocab_size: int, d_text: int, seed: int) -> Var:
    """Seeded unit-norm rows; the padding row is zero. Not trainable."""
    table = np.random.default_rng(seed).normal(size=(vocab_size, d_text))
    table /= np.linalg.norm(table, axis=1, keepdims=True)
    table[PAD_ID] = 0.0
    return Var(table)


def encode_text_stub(token_ids, table: Var) -> Var:
    ids = np.asarray(token_ids)
    if ids.ndim != 2 or not np.issubdtype(ids.dtype, np.integer):
        raise DataError(f"token_ids must be an integer array [B, N], got {ids.dtype} {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        bad = ids[(ids < 0) | (ids >= table.shape[0])][0]
        raise DataError(f"token id {bad} outside vocabulary of size {table.shape[0]}")
    return Var(table.value[ids])


def encode_image_stub(img, params: ModelParams) -> EncoderFeatures:
    img = lift(img)
    h = params.config.image_size
    if img.shape[1:] != (3, h, h):
        raise DimensionError(f"image batch must be [B, 3, {h}, {h}], got {img.shape}")
    feats, x = [], img
    for i, p in enumerate(params.encoder):
        stride = STEM_STRIDE if i == 0 else STAGE_STRIDE
        x = gelu(layer_norm(conv2d(x, p.kernel, p.bias, stride=stride), p.ln_g, p.ln_b, axis=1))
        feats.append(x)
    return EncoderFeatures(feats)


def fuse(feature: Var, text: Var, block: ModabParams) -> Var:
    """Run MoDAB on a ``[B, C, H, W]`` map, treating channels as tokens of width H*W."""
    b, c, hh, ww = feature.shape
    fused = modab_forward(reshape(feature, (b, c, hh * ww)), text, block)
    return reshape(fused, (b, c, hh, ww))


def decoder_forward(fused: Var, skips: EncoderFeatures, params: ModelParams, training: bool = False) -> Var:
    """Decode the fused deepest feature with skips ``skips[2], skips[1], skips[0]`` to ``[B, C_o, H, W]``."""
    cfg = params.config
    x = fused
    for m, p in enumerate(params.decoder):
        skip = skips[2 - m]
        up = conv_transpose2d(x, p.up_kernel, p.up_bias)
        if up.shape != skip.shape:
            raise DimensionError(f"decoder stage {m + 1}: upsampled {up.shape} vs skip {skip.shape}")
        x = concat([up, skip], axis=1)
        x = leaky_relu(channel_norm(conv2d(x, p.conv1, p.conv1_b, pad=1), p.norm1, training))
        x = leaky_relu(channel_norm(conv2d(x, p.conv2, p.conv2_b, pad=1), p.norm2, training))
    x = pixel_shuffle(conv2d(x, params.sun_kernel, params.sun_bias, pad=1), cfg.shuffle_factor)
    x = avg_pool2d_padded(x, cfg.pool_kernel)
    x = conv2d(x, params.head_kernel, params.head_bias)
    return softmax(x, axis=1)


def model_forward(img, token_ids, params: ModelParams, training: bool = False) -> Var:
    """Per-pixel class probabilities ``[B, C_o, H, W]`` for images and their prompts."""
    feats = encode_image_stub(img, params)
    if len(token_ids) != feats[0].shape[0]:
        raise DimensionError(f"{len(token_ids)} prompts for {feats[0].shape[0]} images")
    text = encode_text_stub(token_ids, params.text_table)
    stages = list(feats.stages)
    if len(params.modab) == 1:
        stages[3] = fuse(stages[3], text, params.modab[0])
    elif len(params.modab) == 4:
        stages = [fuse(s, text, blk) for s, blk in zip(stages, params.modab)]
    return decoder_forward(stages[3], EncoderFeatures(stages), params, training)


def count_macs(cfg: ModelConfig, n_tokens: int | None = None) -> dict[str, int]:
    """Multiply-accumulate estimate per module for one sample, from per-op formulae."""
    n = n_tokens or cfg.max_tokens
    ch, hs = cfg.channels, cfg.stage_sizes
    out = {}
    enc, c_in, extent = 0, 3, cfg.image_size
    for i in range(4):
        s = STEM_STRIDE if i == 0 else STAGE_STRIDE
        extent //= s
        enc += extent * extent * ch[i] * c_in * s * s
        c_in = ch[i]
    out["encoder"] = enc

    def modab_macs(c, y):
        di, ds, h = cfg.ssmix_expand * y, cfg.ssmix_state, cfg.heads
        dk = max(1, y // h)
        text = n * cfg.d_text * y
        if cfg.arch == "ssmix_linear":
            text += n * y * y
        else:
            text += n * (y * 2 * di + 2 * di * cfg.ssmix_kernel + di * (di + 2 * ds) + 3 * di * ds + 2 * di * y)
        attn_self = 3 * c * y * h * dk + 2 * h * c * c * dk + c * h * dk * y
        attn_cross = 0 if cfg.arch == "crossattn_add" else (
            c * y * h * dk + 2 * n * y * h * dk + 2 * h * c * n * dk + c * h * dk * y)
        return text + attn_self + attn_cross

    stages = range(4) if cfg.modab_all_stages else [3]
    out["modab"] = sum(modab_macs(ch[i], hs[i] ** 2) for i in stages) if cfg.modab else 0
    dec = 0
    for m in range(3):
        c_in, c, e = ch[3 - m], ch[2 - m], hs[2 - m]
        dec += e * e * c * c_in + e * e * (c * 2 * c * 9 + c * c * 9)
    out["decoder"] = dec
    co, r = cfg.out_classes, cfg.shuffle_factor
    out["head"] = hs[0] ** 2 * co * r * r * ch[0] * 9 + cfg.image_size ** 2 * co * co
    out["total"] = sum(out.values())
    return out


def parameter_breakdown(params: ModelParams) -> dict[str, int]:
    counts: dict[str, int] = {}
    for name, v in params.named_parameters():
        top = name.split(".", 1)[0]
        counts[top] = counts.get(top, 0) + v.value.size
    counts["total"] = params.num_parameters()
    return counts


def predict_masks(probs) -> np.ndarray:
    """Channel-argmax of ``[B, C, H, W]`` probabilities, as ``uint8`` foreground masks (class 1)."""
    arr = probs.value if isinstance(probs, Var) else as_tensor(probs)
    return (np.argmax(arr, axis=1) == 1).astype(np.uint8)


__all__ = [
    "EncoderFeatures", "ModelParams", "count_macs", "decoder_forward", "encode_image_stub",
    "encode_text_stub", "model_forward", "parameter_breakdown", "predict_masks", "text_embedding_table",
]
