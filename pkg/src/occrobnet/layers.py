"""Small parameter containers shared by the network stages."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


class Module:
    """Holds Parameters and child Modules; iteration order is attribute order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_(self) -> None:
        """Set every parameter to zero (used by identity-map checks)."""
        for p in self.parameters():
            p.data[...] = 0.0


class Linear(Module):
    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int, bias: bool = True):
        self.weight = Parameter(T.uniform_init(rng, (n_in, n_out), n_in))
        self.bias = Parameter(np.zeros(n_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, kernel: int,
                 stride: int = 1, bias: bool = True):
        self.weight = Parameter(T.uniform_init(rng, (kernel, kernel, c_in, c_out), kernel * kernel * c_in))
        self.bias = Parameter(np.zeros(c_out)) if bias else None
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        out = T.conv2d(x, self.weight, stride=self.stride)
        return out if self.bias is None else out + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias)


class MLP(Module):
    """Linear layers with ReLU in between."""

    def __init__(self, rng: np.random.Generator, sizes: list[int]):
        self.layers = [Linear(rng, a, b) for a, b in zip(sizes[:-1], sizes[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        return T.mlp_forward(x, [(layer.weight, layer.bias) for layer in self.layers])
