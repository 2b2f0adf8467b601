"""Parameter containers and the small layer set used by the model."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import ops
from .tensor import Tensor, get_default_dtype


class Module:
    """Base class: parameters are discovered from attributes, in assignment order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = dict(self.named_parameters())
        if strict:
            missing = sorted(set(params) - set(state))
            unexpected = sorted(set(state) - set(params))
            if missing or unexpected:
                raise KeyError(f"state mismatch; missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in params.items():
            if name in state:
                arr = np.asarray(state[name])
                if arr.shape != p.shape:
                    raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
                p.data = arr.astype(p.dtype).copy()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=None) -> Tensor:
    bound = math.sqrt(6.0 / fan_in)
    data = rng.uniform(-bound, bound, size=shape).astype(dtype or get_default_dtype())
    return Tensor(data, requires_grad=True)


def zeros_param(shape, dtype=None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype or get_default_dtype()), requires_grad=True)


class Conv2d(Module):
    def __init__(self, rng, c_in: int, c_out: int, k: int = 3, stride: int = 1,
                 dilation: int = 1, pad: int | None = None):
        self.weight = kaiming_uniform(rng, (c_out, c_in, k, k), c_in * k * k)
        self.bias = zeros_param((c_out,))
        self._stride = stride
        self._dilation = dilation
        self._pad = dilation * (k // 2) if pad is None else pad

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self._stride, self._pad, self._dilation)


class Linear(Module):
    """``y = x W + b`` with ``W`` stored as in×out."""

    def __init__(self, rng, n_in: int, n_out: int, bias: bool = True):
        self.weight = kaiming_uniform(rng, (n_in, n_out), n_in)
        if bias:
            self.bias = zeros_param((n_out,))

    def __call__(self, x: Tensor) -> Tensor:
        y = ops.matmul(x, self.weight) if x.ndim >= 2 else \
            ops.reshape(ops.matmul(ops.reshape(x, (1, -1)), self.weight), (-1,))
        return ops.add(y, self.bias) if hasattr(self, "bias") else y


class LSTMCell(Module):
    def __init__(self, rng, n_in: int, n_hidden: int):
        bound = 1.0 / math.sqrt(n_hidden)
        dtype = get_default_dtype()
        self.w_ih = Tensor(rng.uniform(-bound, bound, (4 * n_hidden, n_in)).astype(dtype), requires_grad=True)
        self.w_hh = Tensor(rng.uniform(-bound, bound, (4 * n_hidden, n_hidden)).astype(dtype), requires_grad=True)
        self.bias = zeros_param((4 * n_hidden,))
        self.hidden = n_hidden

    def __call__(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        return ops.lstm_cell(x, h, c, self.w_ih, self.w_hh, self.bias)
