"""Segmentation objectives: Dice + spectral-magnitude consistency + entropy (SEU), and BCE."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError, DimensionError
from .numerics import Var, add, dft2_magnitude, div, log, mean, mul, square, sub
from .numerics import sum as vsum
from .numerics.tape import as_tensor, lift, make

DICE_EPS = 1e-6
ENTROPY_DELTA = 1e-8


@dataclass(frozen=True)
class LossWeights:
    lambda_f: float = 0.3
    lambda_e: float = 0.1
    eps: float = DICE_EPS
    delta: float = ENTROPY_DELTA

    def __post_init__(self):
        for name in ("lambda_f", "lambda_e", "eps", "delta"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigurationError(f"{name} must be finite and nonnegative, got {v}")


@dataclass
class LossBreakdown:
    dice_term: Var
    spectral_term: Var
    entropy_term: Var
    total: Var

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).value) for k in ("dice_term", "spectral_term", "entropy_term", "total")}


def _check_pair(pred: Var, target: np.ndarray) -> None:
    if pred.ndim != 4 or pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} and target {target.shape} must both be [B, C, H, W]")


def check_one_hot(target) -> np.ndarray:
    g = as_tensor(target)
    if g.ndim != 4:
        raise DimensionError(f"one-hot target must be [B, C, H, W], got {g.shape}")
    if not (np.all((g == 0) | (g == 1)) and np.all(g.sum(axis=1) == 1)):
        raise DataError("target is not one-hot over the channel axis")
    return g


def dice_loss(pred, target, eps: float = DICE_EPS) -> Var:
    """Per-sample soft Dice loss over (C, H, W), averaged over the batch."""
    pred, g = lift(pred), check_one_hot(target)
    _check_pair(pred, g)
    axes = (1, 2, 3)
    inter = vsum(mul(pred, g), axis=axes)
    denom = add(vsum(pred, axis=axes), g.sum(axis=axes) + eps)
    return mean(sub(1.0, div(add(mul(inter, 2.0), eps), denom)))


def spectral_consistency(pred, target) -> Var:
    """Mean squared difference of 2-D DFT magnitudes, per channel."""
    pred, g = lift(pred), as_tensor(target)
    _check_pair(pred, g)
    return mean(square(sub(dft2_magnitude(pred), dft2_magnitude(g).value)))


def _xlogx(p: Var, delta: float) -> Var:
    """``p * log(max(p, delta))``: exact ``p log p`` above ``delta``, finite slope below it."""
    safe = np.maximum(p.value, delta)
    logs = np.log(safe)
    return make(p.value * logs, (p,), lambda g: (g * (logs + (p.value >= delta)),))


def entropy_regularizer(pred, delta: float = ENTROPY_DELTA) -> Var:
    """``-(1 / (B*H*W)) * sum p*log(p)``; the class axis is summed, not averaged.

    ``delta`` floors the log argument so zero probabilities stay finite.
    """
    pred = lift(pred)
    if pred.ndim != 4:
        raise DimensionError(f"prediction must be [B, C, H, W], got {pred.shape}")
    b, _, h, w = pred.shape
    return mul(vsum(_xlogx(pred, delta)), -1.0 / (b * h * w))


def seu_loss(pred, target, weights: LossWeights = LossWeights()) -> LossBreakdown:
    pred = lift(pred)
    d = dice_loss(pred, target, weights.eps)
    s = spectral_consistency(pred, target)
    e = entropy_regularizer(pred, weights.delta)
    total = add(add(d, mul(s, weights.lambda_f)), mul(e, weights.lambda_e))
    return LossBreakdown(d, s, e, total)


def bce_loss(pred, target, delta: float = ENTROPY_DELTA) -> Var:
    pred, g = lift(pred), as_tensor(target)
    _check_pair(pred, g)
    pos = mul(log(add(pred, delta)), g)
    negative = mul(log(add(sub(1.0, pred), delta)), 1.0 - g)
    return mul(mean(add(pos, negative)), -1.0)


def training_loss(pred, target, mode: str, weights: LossWeights = LossWeights()) -> LossBreakdown:
    """Loss selected by name; non-SEU modes report zero spectral/entropy terms."""
    if mode == "seu":
        return seu_loss(pred, target, weights)
    if mode == "dice":
        d = dice_loss(pred, target, weights.eps)
    elif mode == "bce":
        d = bce_loss(pred, target, weights.delta)
    else:
        raise ConfigurationError(f"unknown loss mode {mode!r}")
    zero = Var(np.array(0.0))
    return LossBreakdown(d, zero, zero, d)
