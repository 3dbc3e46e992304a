"""Finite-difference gradient verification against the tape."""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from ..errors import GradientCheckError
from .tape import Tape, Var, backward

KINK_THRESHOLD = 0.02
KINK_SHIFT = 0.05

# When not None, piecewise-linear activations append their active-branch masks here.
_kink_log: list | None = None


def record_kink_pattern(mask: np.ndarray) -> None:
    if _kink_log is not None:
        _kink_log.append(np.packbits(mask).tobytes())


@contextmanager
def _watch_kinks():
    global _kink_log
    prev, _kink_log = _kink_log, []
    try:
        yield _kink_log
    finally:
        _kink_log = prev


def away_from_kinks(x: np.ndarray, threshold: float = KINK_THRESHOLD, shift: float = KINK_SHIFT) -> np.ndarray:
    """Shift entries with ``|x| < threshold`` by ``+shift`` so probes stay on one side of 0."""
    x = np.array(x, dtype=np.float64)
    x[np.abs(x) < threshold] += shift
    return x


def grad_check(
    f: Callable[[], Var],
    params: Sequence[Var],
    h: float = 1e-4,
    max_coords: int = 200,
    seed: int = 0,
    name: str = "f",
    return_details: bool = False,
):
    """Compare tape gradients of scalar ``f()`` with five-point central differences.

    ``f`` closes over ``params`` and must be deterministic. Large parameter sets
    are probed at a random subsample of at most ``max_coords`` coordinates.
    Coordinates whose four probes land on different sides of a LeakyReLU
    kink are skipped (their one-sided slopes disagree by construction). The
    stencil ``(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`` has O(h^4)
    truncation error, so curvature in tiny layer norms does not masquerade as
    a gradient bug.

    Returns the maximum of ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    for p in params:
        p.grad = None
    with Tape():
        loss = f()
        backward(loss)
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]
    if not all(np.all(np.isfinite(a)) for a in analytic):
        raise GradientCheckError(f"{name}: analytic gradient contains non-finite values")

    sizes = np.array([p.value.size for p in params])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    order = rng.permutation(total) if total > max_coords else np.arange(total)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst, checked, skipped = 0.0, 0, 0
    for flat in order:
        if checked >= max_coords:
            break
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        p, local = params[which], int(flat - offsets[which])
        view = p.value.reshape(-1)
        orig = view[local]
        probes, patterns = [], []
        for step in (2 * h, h, -h, -2 * h):
            with _watch_kinks() as kinks:
                view[local] = orig + step
                probes.append(float(f().value.reshape(-1)[0]))
            patterns.append(kinks)
        view[local] = orig
        if any(k != patterns[0] for k in patterns[1:]):
            skipped += 1
            continue
        f2, f1, fm1, fm2 = probes
        numeric = (-f2 + 8.0 * f1 - 8.0 * fm1 + fm2) / (12.0 * h)
        a = float(analytic[which].reshape(-1)[local])
        if not (np.isfinite(numeric) and np.isfinite(a)):
            raise GradientCheckError(f"{name}: non-finite gradient estimate at parameter {which}, index {local}")
        err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        worst = max(worst, err)
        checked += 1
    if return_details:
        return worst, {"checked": checked, "skipped_kink": skipped}
    return worst
