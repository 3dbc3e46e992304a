"""Parameter records: dataclasses whose fields are Vars, nested groups, or lists of groups."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Iterator

import numpy as np

from .errors import DimensionError
from .numerics import Var


@dataclass
class ParamGroup:
    """Base for parameter dataclasses.

    Trainable tensors are ``Var(requires_grad=True)``; buffers (for example
    batch-norm running statistics) are plain ``Var`` fields and are saved but
    not optimized. ``None`` fields are skipped.
    """

    def named_tensors(self, prefix: str = "") -> Iterator[tuple[str, Var]]:
        for f in fields(self):
            value = getattr(self, f.name)
            name = prefix + f.name
            if value is None:
                continue
            if isinstance(value, Var):
                yield name, value
            elif isinstance(value, ParamGroup):
                yield from value.named_tensors(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, ParamGroup):
                        yield from item.named_tensors(f"{name}.{i}.")
                    elif isinstance(item, Var):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Var]]:
        for name, v in self.named_tensors(prefix):
            if v.requires_grad:
                yield name, v

    def parameters(self) -> list[Var]:
        return [v for _, v in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(v.value.size for v in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: v.value.copy() for name, v in self.named_tensors()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_tensors())
        missing = own.keys() - state.keys()
        unexpected = state.keys() - own.keys()
        if missing or unexpected:
            raise DimensionError(
                f"state mismatch: missing {sorted(missing)[:5]}, unexpected {sorted(unexpected)[:5]}")
        for name, v in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != v.shape:
                raise DimensionError(f"{name}: checkpoint shape {arr.shape} != model shape {v.shape}")
            v.value = arr.copy()


def param(value) -> Var:
    return Var(value, requires_grad=True)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> Var:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return param(rng.uniform(-limit, limit, size=shape))


def he_normal(rng: np.random.Generator, fan_in: int, shape) -> Var:
    return param(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape))


def zeros(*shape) -> Var:
    return param(np.zeros(shape))


def ones(*shape) -> Var:
    return param(np.ones(shape))
