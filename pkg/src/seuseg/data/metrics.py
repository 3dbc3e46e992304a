"""Overlap metrics on binary masks."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError


def _pair(pred, gt):
    p, g = np.asarray(pred).astype(bool), np.asarray(gt).astype(bool)
    if p.shape != g.shape:
        raise DimensionError(f"mask shapes differ: {p.shape} vs {g.shape}")
    return p, g


def _iou(p, g) -> float:
    union = np.count_nonzero(p | g)
    return 1.0 if union == 0 else np.count_nonzero(p & g) / union


def dice_score(pred, gt) -> float:
    """``2|P & G| / (|P| + |G|)``; two empty masks score 1."""
    p, g = _pair(pred, gt)
    total = np.count_nonzero(p) + np.count_nonzero(g)
    return 1.0 if total == 0 else 2.0 * np.count_nonzero(p & g) / total


def miou(pred, gt) -> float:
    """Mean of foreground and background IoU; a class absent from both masks scores 1."""
    p, g = _pair(pred, gt)
    return 0.5 * (_iou(p, g) + _iou(~p, ~g))
