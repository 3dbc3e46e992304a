"""Named finite-difference checks for every differentiable op and the full model.

Each check builds small random inputs in a smooth region, contracts the op's
output with a fixed random tensor, and returns :func:`grad_check`'s worst
relative error.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import numerics as nx
from .attention import AttnParams, mhca, mhsa
from .config import ModelConfig
from .data.vocab import VOCAB
from .loss import bce_loss, dice_loss, entropy_regularizer, seu_loss, spectral_consistency
from .model import ModelParams, model_forward
from .modab import ModabParams, modab_forward
from .numerics import Var, away_from_kinks, grad_check
from .numerics import sum as vsum
from .ssmix import SSMixConfig, SSMixParams, delta_reparam, selective_scan, ssmix_forward

OP_TOLERANCE = 1e-6
MODEL_TOLERANCE = 1e-5


def _p(x) -> Var:
    return Var(np.asarray(x, dtype=np.float64), requires_grad=True)


def _contract(rng, fn: Callable[..., Var], *inputs: Var, **kw) -> float:
    c = rng.normal(size=fn(*inputs).shape)
    return grad_check(lambda: vsum(nx.mul(fn(*inputs), c)), list(inputs), **kw)


def _unary(op, lo=-2.0, hi=2.0, shape=(3, 4)):
    return lambda rng: _contract(rng, op, _p(rng.uniform(lo, hi, size=shape)))


def _binary(op, positive_rhs=False):
    def check(rng):
        b = rng.uniform(0.5, 2.0, size=(3, 4)) if positive_rhs else rng.normal(size=(3, 4))
        return _contract(rng, op, _p(rng.normal(size=(3, 4))), _p(b))
    return check


def _one_hot(rng, b=2, h=4, w=4):
    fg = (rng.uniform(size=(b, h, w)) < 0.3).astype(np.float64)
    return np.stack([1.0 - fg, fg], axis=1)


def _loss_check(loss):
    def check(rng):
        g = _one_hot(rng)
        logits = _p(rng.normal(size=g.shape))
        return grad_check(lambda: loss(nx.softmax(logits, axis=1), g), [logits])
    return check


def _scan(rng):
    b, d, s, n = 2, 3, 2, 6
    u, delta = _p(rng.normal(size=(b, d, n))), _p(rng.uniform(0.05, 1.0, size=(b, d, n)))
    a, e = _p(-np.exp(rng.normal(size=(d, s)))), _p(rng.normal(size=d))
    bt, ct = _p(rng.normal(size=(b, s, n))), _p(rng.normal(size=(b, s, n)))
    return _contract(rng, selective_scan, u, delta, a, bt, ct, e)


def _ssmix(rng):
    cfg = SSMixConfig(d_model=4, d_out=3, expand=2, d_state=3, kernel=3)
    p = SSMixParams.init(rng, cfg)
    p.bias_delta.value = rng.normal(size=cfg.d_inner)
    x = _p(rng.normal(size=(2, 5, 4)))
    c = rng.normal(size=(2, 5, 3))
    return grad_check(lambda: vsum(nx.mul(ssmix_forward(x, cfg, p), c)), [x, *p.parameters()], max_coords=300)


def _attention(cross: bool):
    def check(rng):
        p = AttnParams.init(rng, 6, 2)
        q = _p(rng.normal(size=(2, 3, 6)))
        kv = _p(rng.normal(size=(2, 5, 6)))
        if cross:
            return _contract(rng, lambda a, b, *_: mhca(a, b, p), q, kv, *p.parameters())
        return _contract(rng, lambda a, *_: mhsa(a, p), q, *p.parameters())
    return check


def _modab(arch: str):
    def check(rng):
        p = ModabParams.init(rng, 5, 4, heads=2, expand=2, d_state=3, kernel=3, arch=arch)
        p.alpha.value = np.array(0.7)
        if arch != "ssmix_linear":
            p.mixer.bias_delta.value = rng.normal(size=p.mixer.bias_delta.shape)
        x, t = _p(rng.normal(size=(2, 3, 4))), _p(rng.normal(size=(2, 6, 5)))
        c = rng.normal(size=(2, 3, 4))
        return grad_check(lambda: vsum(nx.mul(modab_forward(x, t, p), c)), [x, t, *p.parameters()], max_coords=300)
    return check


def full_model_check(rng, max_coords: int = 200) -> float:
    """SEU loss of the whole network on a 2-sample batch at 32 x 32, gradients w.r.t. every parameter."""
    p = ModelParams.init(ModelConfig(image_size=32))
    for blk in p.modab:
        blk.alpha.value = np.array(0.5)
    img = rng.uniform(size=(2, 3, 32, 32))
    ids = rng.integers(1, VOCAB.size, size=(2, p.config.max_tokens))
    g = _one_hot(rng, 2, 32, 32)
    return grad_check(lambda: seu_loss(model_forward(img, ids, p), g).total, p.parameters(),
                      max_coords=max_coords, name="model")


def _conv2d(k, stride, pad):
    def check(rng):
        x, w, b = _p(rng.normal(size=(2, 3, 6, 6))), _p(rng.normal(size=(4, 3, k, k))), _p(rng.normal(size=4))
        return _contract(rng, lambda *a: nx.conv2d(*a, stride=stride, pad=pad), x, w, b)
    return check


def _batch_norm(rng):
    x = _p(rng.normal(size=(3, 2, 3, 3)))
    return _contract(rng, nx.batch_norm, x, _p(rng.uniform(0.5, 1.5, size=2)), _p(rng.normal(size=2)))


OP_CHECKS: dict[str, Callable[[np.random.Generator], float]] = {
    "add": _binary(nx.add),
    "sub": _binary(nx.sub),
    "mul": _binary(nx.mul),
    "div": _binary(nx.div, positive_rhs=True),
    "exp": _unary(nx.exp),
    "log": _unary(nx.log, 0.2, 3.0),
    "sqrt": _unary(nx.sqrt, 0.2, 3.0),
    "square": _unary(nx.square),
    "tanh": _unary(nx.tanh),
    "sigmoid": _unary(nx.sigmoid),
    "softplus": _unary(nx.softplus),
    "gelu": _unary(nx.gelu),
    "leaky_relu": lambda rng: _contract(rng, nx.leaky_relu, _p(away_from_kinks(rng.normal(size=(3, 4))))),
    "matmul": lambda rng: _contract(rng, nx.matmul, _p(rng.normal(size=(2, 3, 4))), _p(rng.normal(size=(4, 5)))),
    "sum": lambda rng: _contract(rng, lambda a: nx.sum(a, axis=1), _p(rng.normal(size=(3, 4, 2)))),
    "mean": lambda rng: _contract(rng, lambda a: nx.mean(a, axis=(0, 2)), _p(rng.normal(size=(3, 4, 2)))),
    "transpose": lambda rng: _contract(rng, lambda a: nx.transpose(a, (2, 0, 1)), _p(rng.normal(size=(3, 4, 2)))),
    "concat": lambda rng: _contract(rng, lambda a, b: nx.concat([a, b], axis=1),
                                    _p(rng.normal(size=(2, 3))), _p(rng.normal(size=(2, 2)))),
    "softmax": lambda rng: _contract(rng, lambda a: nx.softmax(a, axis=1), _p(rng.normal(size=(2, 3, 4)))),
    "layer_norm": lambda rng: _contract(rng, nx.layer_norm, _p(rng.normal(size=(2, 3, 5))),
                                        _p(rng.uniform(0.5, 1.5, size=5)), _p(rng.normal(size=5))),
    "batch_norm": _batch_norm,
    "conv1d_depthwise": lambda rng: _contract(rng, nx.conv1d_depthwise, _p(rng.normal(size=(2, 3, 7))),
                                              _p(rng.normal(size=(3, 3))), _p(rng.normal(size=3))),
    "conv2d": _conv2d(3, 1, 1),
    "conv2d_strided": _conv2d(2, 2, 0),
    "conv_transpose2d": lambda rng: _contract(rng, nx.conv_transpose2d, _p(rng.normal(size=(2, 3, 3, 3))),
                                              _p(rng.normal(size=(3, 2, 2, 2))), _p(rng.normal(size=2))),
    "pixel_shuffle": lambda rng: _contract(rng, lambda a: nx.pixel_shuffle(a, 2), _p(rng.normal(size=(1, 8, 3, 3)))),
    "pixel_unshuffle": lambda rng: _contract(rng, lambda a: nx.pixel_unshuffle(a, 2),
                                             _p(rng.normal(size=(1, 2, 4, 4)))),
    "avg_pool2d": lambda rng: _contract(rng, lambda a: nx.avg_pool2d_padded(a, 3), _p(rng.normal(size=(1, 2, 5, 5)))),
    "dft2_magnitude": lambda rng: _contract(rng, nx.dft2_magnitude, _p(rng.normal(size=(2, 1, 4, 8)))),
    "delta_reparam": lambda rng: _contract(rng, delta_reparam, _p(rng.normal(size=(2, 3, 4))), _p(rng.normal(size=3))),
    "selective_scan": _scan,
    "mhsa": _attention(cross=False),
    "mhca": _attention(cross=True),
    "ssmix": _ssmix,
    "modab": _modab("full"),
    "modab_crossattn_add": _modab("crossattn_add"),
    "modab_ssmix_linear": _modab("ssmix_linear"),
    "dice_loss": _loss_check(dice_loss),
    "spectral_consistency": _loss_check(spectral_consistency),
    "entropy_regularizer": _loss_check(entropy_regularizer),
    "bce_loss": _loss_check(bce_loss),
    "seu_loss": _loss_check(lambda p, g: seu_loss(p, g).total),
}


def run_check(name: str, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    if name == "model":
        return full_model_check(rng)
    try:
        return OP_CHECKS[name](rng)
    except KeyError:
        from .errors import ConfigurationError
        raise ConfigurationError(f"unknown op {name!r}; choose from {sorted(OP_CHECKS)} or 'model'") from None


def tolerance_for(name: str) -> float:
    return MODEL_TOLERANCE if name == "model" else OP_TOLERANCE
