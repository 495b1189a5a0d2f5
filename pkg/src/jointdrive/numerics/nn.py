"""Parameters, a light module tree, and the layer building blocks."""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass(eq=False)
class Param:
    """A named learnable tensor plus its Adam state."""

    name: str
    tensor: Tensor
    adam_m: np.ndarray = field(default=None)
    adam_v: np.ndarray = field(default=None)
    step_count: int = 0

    def __post_init__(self):
        self.tensor.requires_grad = True
        if self.adam_m is None:
            self.adam_m = np.zeros_like(self.tensor.data)
        if self.adam_v is None:
            self.adam_v = np.zeros_like(self.tensor.data)

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> np.ndarray | None:
        return self.tensor.grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.tensor.shape


def param_rng(seed: int, name: str) -> np.random.Generator:
    """Independent stream per parameter so init does not depend on build order."""
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


class Module:
    """Holds Params and child Modules as attributes; names derive from attribute paths."""

    def __init__(self, seed: int = 0, prefix: str = ""):
        self._seed = seed
        self._prefix = prefix

    def _path(self, name: str) -> str:
        return f"{self._prefix}.{name}" if self._prefix else name

    def child(self, name: str) -> str:
        return self._path(name)

    def param(self, name: str, shape, init: str = "uniform", fan_in: int | None = None,
              value: float = 0.0) -> Param:
        full = self._path(name)
        shape = tuple(shape)
        if init == "uniform":
            bound = np.sqrt(1.0 / (fan_in if fan_in else shape[-1]))
            data = param_rng(self._seed, full).uniform(-bound, bound, size=shape)
        elif init == "normal":
            data = param_rng(self._seed, full).normal(0.0, 0.02, size=shape)
        elif init == "const":
            data = np.full(shape, value, dtype=np.float64)
        else:
            raise ValueError(f"unknown init {init!r}")
        p = Param(full, Tensor(data))
        setattr(self, name, p)
        return p

    def named_parameters(self) -> Iterator[tuple[str, Param]]:
        seen: set[int] = set()
        for p in self._walk():
            if id(p) not in seen:
                seen.add(id(p))
                yield p.name, p

    def parameters(self) -> list[Param]:
        return [p for _, p in self.named_parameters()]

    def _walk(self) -> Iterator[Param]:
        for key in sorted(vars(self)):
            val = getattr(self, key)
            if isinstance(val, Param):
                yield val
            elif isinstance(val, Module):
                yield from val._walk()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item._walk()
                    elif isinstance(item, Param):
                        yield item

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.tensor.grad = None

    def num_parameters(self) -> int:
        return sum(p.tensor.size for p in self.parameters())


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, seed: int = 0, prefix: str = "", zero_init: bool = False):
        super().__init__(seed, prefix)
        if zero_init:
            self.param("weight", (d_out, d_in), "const")
            self.param("bias", (d_out,), "const")
        else:
            self.param("weight", (d_out, d_in), fan_in=d_in)
            self.param("bias", (d_out,), fan_in=d_in)

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight.tensor, self.bias.tensor)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int = 1, padding: int = 0,
                 seed: int = 0, prefix: str = "", zero_init: bool = False):
        super().__init__(seed, prefix)
        self.stride, self.padding = stride, padding
        fan_in = c_in * kernel * kernel
        init = "const" if zero_init else "uniform"
        self.param("weight", (c_out, c_in, kernel, kernel), init, fan_in=fan_in)
        self.param("bias", (c_out,), init, fan_in=fan_in)

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight.tensor, self.bias.tensor, self.stride, self.padding)


class LayerNorm(Module):
    def __init__(self, d: int, seed: int = 0, prefix: str = "", eps: float = 1e-5):
        super().__init__(seed, prefix)
        self.eps = eps
        self.param("weight", (d,), "const", value=1.0)
        self.param("bias", (d,), "const", value=0.0)

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.weight.tensor, self.bias.tensor, self.eps)


class GRUCell(Module):
    def __init__(self, d_in: int, hidden: int, seed: int = 0, prefix: str = ""):
        super().__init__(seed, prefix)
        self.hidden = hidden
        self.param("w_ih", (3 * hidden, d_in), fan_in=hidden)
        self.param("w_hh", (3 * hidden, hidden), fan_in=hidden)
        self.param("b_ih", (3 * hidden,), fan_in=hidden)
        self.param("b_hh", (3 * hidden,), fan_in=hidden)

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        return T.gru_cell(x, h, self.w_ih.tensor, self.w_hh.tensor, self.b_ih.tensor, self.b_hh.tensor)
