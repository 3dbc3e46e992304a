"""Synthetic referring-segmentation scenes.

Each image holds two or three shapes in distinct quadrants with distinct gray
levels. The caption names one shape and its quadrant, and the mask covers only
that shape, so the prompt is needed to pick the target.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError
from ..numerics import is_power_of_two
from .vocab import SHAPE_WORDS, VOCAB, tokenize

QUADRANTS = (("upper", "left"), ("upper", "right"), ("lower", "left"), ("lower", "right"))
NOISE_SIGMA = 0.05
BACKGROUND = 0.1
GRAY_LEVELS = (0.35, 0.5, 0.65, 0.8, 0.95)
FORMAT_VERSION = 1
N_CLASSES = len(QUADRANTS) * len(SHAPE_WORDS)


@dataclass(frozen=True)
class Shape:
    kind: str
    quadrant: int     # index into QUADRANTS
    cy: float
    cx: float
    size: float       # disc radius, square half-side, triangle half-height
    gray: float


@dataclass
class Sample:
    image: np.ndarray        # [3, H, W] in [0, 1]
    token_ids: np.ndarray    # [N]
    mask: np.ndarray         # one-hot [2, H, W]
    caption: str
    shapes: tuple = field(default=())
    target: int = 0

    @property
    def foreground(self) -> np.ndarray:
        return self.mask[1].astype(np.uint8)


@dataclass(frozen=True)
class DatasetManifest:
    seed: int
    count: int
    size: int
    n_train: int
    n_val: int
    n_test: int
    max_tokens: int = 12
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        if min(self.n_train, self.n_val, self.n_test) < 0 or self.n_train + self.n_val + self.n_test != self.count:
            raise ConfigurationError(
                f"split counts {self.n_train}/{self.n_val}/{self.n_test} must be nonnegative and sum to {self.count}")

    def split_indices(self, split: str) -> range:
        bounds = {"train": (0, self.n_train),
                  "val": (self.n_train, self.n_train + self.n_val),
                  "test": (self.n_train + self.n_val, self.count)}
        if split not in bounds:
            raise ConfigurationError(f"unknown split {split!r}; expected train, val or test")
        return range(*bounds[split])


def default_splits(count: int) -> tuple[int, int, int]:
    """Two thirds train, the rest halved into val and test (300 -> 200/50/50)."""
    n_train = round(count * 2 / 3)
    n_val = (count - n_train) // 2
    return n_train, n_val, count - n_train - n_val


def rasterize(shape: Shape, h: int) -> np.ndarray:
    """Boolean ``[h, h]`` coverage of one shape, sampled at pixel centers."""
    y, x = np.mgrid[0:h, 0:h] + 0.5
    dy, dx = y - shape.cy, x - shape.cx
    s = shape.size
    if shape.kind == "disc":
        return dy * dy + dx * dx <= s * s
    if shape.kind == "square":
        return (np.abs(dy) <= s) & (np.abs(dx) <= s)
    if shape.kind == "triangle":
        # apex up at (cy - s), base at (cy + s) spanning 2s
        return (dy <= s) & (np.abs(dx) <= (dy + s) / 2)
    raise ConfigurationError(f"unknown shape kind {shape.kind!r}")


def caption_for(shape: Shape) -> str:
    vert, horiz = QUADRANTS[shape.quadrant]
    return f"segment the {shape.kind} in the {vert} {horiz}"


def _place(rng: np.random.Generator, kind: str, quadrant: int, gray: float, h: int) -> Shape:
    q = h / 2
    size = rng.uniform(0.18, 0.36) * q
    margin = size + 1.0
    cy = rng.uniform(margin, q - margin) + (q if quadrant >= 2 else 0.0)
    cx = rng.uniform(margin, q - margin) + (q if quadrant % 2 else 0.0)
    return Shape(kind, quadrant, float(cy), float(cx), float(size), gray)


def target_class(seed: int, i: int) -> int:
    """Caption class of sample ``i``: each block of 12 consecutive samples covers all 12 classes once."""
    block, slot = divmod(i, N_CLASSES)
    return int(np.random.default_rng([seed, block, 0]).permutation(N_CLASSES)[slot])


def _scene(rng: np.random.Generator, h: int, cls: int):
    target_q, kind_idx = divmod(cls, len(SHAPE_WORDS))
    target_kind = SHAPE_WORDS[kind_idx]
    n_shapes = int(rng.integers(2, 4))
    others = [int(q) for q in rng.permutation([q for q in range(4) if q != target_q])[: n_shapes - 1]]
    grays = rng.choice(GRAY_LEVELS, size=n_shapes, replace=False)
    shapes = [_place(rng, target_kind, target_q, float(grays[0]), h)]
    for q, g in zip(others, grays[1:]):
        shapes.append(_place(rng, SHAPE_WORDS[int(rng.integers(len(SHAPE_WORDS)))], q, float(g), h))
    order = rng.permutation(n_shapes)
    shapes = [shapes[i] for i in order]
    return shapes, int(np.flatnonzero(order == 0)[0])


def _feasible(masks: list[np.ndarray], h: int) -> bool:
    total = np.zeros((h, h), dtype=np.int32)
    for m in masks:
        if not m.any() or m.sum() >= 0.25 * h * h:
            return False
        total += m
    return bool(total.max() <= 1)


def generate_sample(rng: np.random.Generator, h: int, max_tokens: int = 12, cls: int | None = None) -> Sample:
    """One scene; ``cls`` (quadrant * 3 + shape) fixes the target, otherwise it is drawn from ``rng``."""
    if cls is None:
        cls = int(rng.integers(N_CLASSES))
    # placement inside disjoint quadrants always fits; the check guards degenerate rasters
    while True:
        shapes, target = _scene(rng, h, cls)
        masks = [rasterize(s, h) for s in shapes]
        if _feasible(masks, h):
            break
    gray = np.full((h, h), BACKGROUND)
    for s, m in zip(shapes, masks):
        gray[m] = s.gray
    gray = np.clip(gray + rng.normal(0.0, NOISE_SIGMA, size=(h, h)), 0.0, 1.0)
    fg = masks[target].astype(np.float64)
    caption = caption_for(shapes[target])
    return Sample(
        image=np.repeat(gray[None], 3, axis=0),
        token_ids=tokenize(caption, max_tokens, VOCAB),
        mask=np.stack([1.0 - fg, fg]),
        caption=caption,
        shapes=tuple(shapes),
        target=target,
    )


def synth_generate(seed: int, count: int, size: int, splits: tuple[int, int, int] | None = None,
                   max_tokens: int = 12) -> tuple[list[Sample], DatasetManifest]:
    """``count`` samples at ``size x size``.

    Sample ``i`` draws from its own stream seeded by ``(seed, i)``; target classes are
    balanced in blocks of 12 so caption frequencies stay close to uniform.
    """
    if not is_power_of_two(size) or size < 32:
        raise ConfigurationError(f"image size must be a power of two >= 32, got {size}")
    if count < 1:
        raise ConfigurationError(f"count must be >= 1, got {count}")
    n_train, n_val, n_test = splits or default_splits(count)
    manifest = DatasetManifest(seed, count, size, n_train, n_val, n_test, max_tokens)
    samples = [generate_sample(np.random.default_rng([seed, i]), size, max_tokens, target_class(seed, i))
               for i in range(count)]
    return samples, manifest
