"""Tensor values and the computation tape used for reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` whenever at
least one input requires a gradient.  Outside of a tape nothing is recorded,
so evaluation code needs no special "no grad" mode.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ContractError

_local = threading.local()
_default_dtype = np.float64


def get_default_dtype():
    return _default_dtype


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ContractError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _default_dtype = dtype


@contextmanager
def default_dtype(dtype):
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A dense real array that can take part in a recorded computation."""

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(dtype or _default_dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node_id: Optional[int] = None
        self._tape: Optional[Tape] = None

    # --- array-like views -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # --- operator sugar (implemented in ops) -------------------------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        if np.isscalar(other):
            return ops.scalar_mul(self, float(other))
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        if np.isscalar(other):
            return ops.scalar_mul(self, float(other))
        return ops.mul(other, self)

    def __neg__(self):
        from . import ops
        return ops.scalar_mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index: int):
        """Integer indexing along the first axis only."""
        from . import ops
        if not isinstance(index, (int, np.integer)):
            raise TypeError("Tensor supports integer indexing along axis 0 only")
        i = int(index) % self.shape[0]
        return ops.reshape(ops.slice(self, 0, i, i + 1), self.shape[1:])

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

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


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


@dataclass
class TapeEntry:
    kind: str
    inputs: tuple
    outputs: tuple
    backward: Callable
    saved: dict = field(default_factory=dict)


class Tape:
    """Ordered record of primitive applications.

    Entries are appended as operations execute, so the list is already in
    topological order; :meth:`backward` walks it in reverse.
    """

    def __init__(self):
        self.entries: list[TapeEntry] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        else:  # pragma: no cover - misuse guard
            stack.remove(self)

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, kind: str, inputs: Sequence[Tensor], outputs: Sequence[Tensor],
               backward: Callable, **saved) -> None:
        index = len(self.entries)
        for out in outputs:
            out.node_id = index
            out._tape = self
            out.requires_grad = True
        self.entries.append(TapeEntry(kind, tuple(inputs), tuple(outputs), backward, saved))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf on the tape."""
        if loss.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if loss.node_id is None or loss._tape is not self:
            if loss.requires_grad:
                _accumulate_leaf(loss, np.ones_like(loss.data))
                return
            raise ContractError("loss was not recorded on this tape")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for entry in reversed(self.entries[: loss.node_id + 1]):
            out_grads = [grads.pop(id(o), None) for o in entry.outputs]
            if all(g is None for g in out_grads):
                continue
            if len(entry.outputs) == 1:
                in_grads = entry.backward(out_grads[0])
            else:
                out_grads = [np.zeros_like(o.data) if g is None else g
                             for o, g in zip(entry.outputs, out_grads)]
                in_grads = entry.backward(out_grads)
            for inp, g in zip(entry.inputs, in_grads):
                if g is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if inp.node_id is None or inp._tape is not self:
                    leaves[key] = inp
                prev = grads.get(key)
                grads[key] = g if prev is None else prev + g
        for key, leaf in leaves.items():
            _accumulate_leaf(leaf, grads[key])


def _accumulate_leaf(leaf: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=leaf.data.dtype).reshape(leaf.shape)
    leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


def backward(loss: Tensor) -> None:
    """Run the reverse sweep on the tape that produced ``loss``."""
    tape = loss._tape
    if tape is None:
        if loss.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise ContractError("loss does not require grad and was not recorded")
        _accumulate_leaf(loss, np.ones_like(loss.data))
        return
    tape.backward(loss)
