"""Reverse-mode automatic differentiation over numpy float64 arrays.

A :class:`Tape` records every operation executed while it is active. Leaf
variables created with ``requires_grad=True`` (model parameters) live outside
any tape and persist across forward passes; their ``grad`` accumulates until
explicitly cleared.

Outside an active tape, operations evaluate eagerly and return constant
variables, which is how inference runs.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ContractError

Tensor = np.ndarray

_ACTIVE_TAPES: list["Tape"] = []


def as_tensor(value) -> Tensor:
    """Coerce ``value`` to a float64 ndarray (the package-wide Tensor type)."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim and min(arr.shape) < 1:
        raise ContractError(f"tensor extents must be >= 1, got shape {arr.shape}")
    return arr


class Tape:
    """Ordered record of operations; nodes are appended in topological order."""

    def __init__(self) -> None:
        self.nodes: list[Var] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: "Var", parents: Sequence["Var"], backward_fn) -> None:
        if self.consumed:
            raise ContractError("tape already consumed by backward(); open a new Tape")
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
        out.tape = self
        out.requires_grad = True
        self.nodes.append(out)


def active_tape() -> Tape | None:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


class Var:
    """A differentiable value.

    ``grad`` is ``None`` until a backward pass reaches this variable.
    """

    __slots__ = ("value", "grad", "requires_grad", "tape", "parents", "backward_fn", "name")
    __array_priority__ = 1000

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = as_tensor(value)
        self.grad: Tensor | None = None
        self.requires_grad = requires_grad
        self.tape: Tape | None = None
        self.parents: tuple[Var, ...] = ()
        self.backward_fn: Callable | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def is_leaf(self) -> bool:
        return self.backward_fn is None

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> Tensor:
        return self.value

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; implementations live in .ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


def lift(x) -> Var:
    """Wrap non-Var operands as constants."""
    return x if isinstance(x, Var) else Var(x)


def make(value: Tensor, parents: Sequence[Var], backward_fn) -> Var:
    """Create an op output, recording it when a tape is active and a parent needs grad.

    ``backward_fn(g)`` receives the output gradient and returns one gradient
    (or ``None``) per parent, in order.
    """
    out = Var(value)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        tape.record(out, parents, backward_fn)
    return out


def backward(loss: Var) -> None:
    """Propagate d(loss)/d(node) to every variable that requires grad.

    Leaf gradients accumulate into ``.grad``; intermediate gradients are
    overwritten on each call. The tape is consumed.
    """
    if loss.value.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    tape = loss.tape
    if tape is None:
        raise ContractError("loss was not recorded on a tape (no parameter requires grad)")
    if tape.consumed:
        raise ContractError("tape already consumed by a previous backward()")

    pending: dict[int, Tensor] = {id(loss): np.ones_like(loss.value)}
    end = tape.nodes.index(loss)
    for node in reversed(tape.nodes[: end + 1]):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g
        grads = node.backward_fn(g)
        for parent, pg in zip(node.parents, grads):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                pg = unbroadcast(pg, parent.shape)
            if parent.is_leaf:
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
            else:
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg
    tape.consumed = True


def unbroadcast(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def zero_grad(params: Iterable[Var]) -> None:
    for p in params:
        p.grad = None
