"""Parameter containers and the small layers the models are built from."""

from __future__ import annotations

from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .rng import Rng
from .tensor import Tensor, layer_norm, linear, relu


class Parameter(NamedTuple):
    """A named trainable tensor; names are unique within a model."""

    name: str
    tensor: Tensor


class Module:
    """Base class: walks attributes to enumerate parameters in creation order."""

    def named_parameters(self, prefix: str = "") -> Iterator[Parameter]:
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield Parameter(name, value)
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield Parameter(f"{name}.{i}", item)

    def parameters(self) -> list[Parameter]:
        params = list(self.named_parameters())
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        return params

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Copy values into parameters by name; shapes must match."""
        for name, tensor in self.parameters():
            src = arrays[name]
            if src.shape != tensor.shape:
                raise ValueError(f"parameter {name}: shape {src.shape} != {tensor.shape}")
            tensor.data[...] = src

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.parameters()}


def xavier(rng: Rng, d_in: int, d_out: int, scale: float | None = None) -> np.ndarray:
    s = scale if scale is not None else np.sqrt(2.0 / (d_in + d_out))
    return rng.normal((d_in, d_out)) * s


class Linear(Module):
    """y = x @ W + b with Xavier-normal init."""

    def __init__(self, d_in: int, d_out: int, rng: Rng, bias: bool = True, init_scale: float | None = None):
        self.weight = Tensor(xavier(rng, d_in, d_out, init_scale), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, eps=self.eps)


class MLP(Module):
    """Stack of Linear layers with relu between them (none after the last)."""

    def __init__(self, widths: Sequence[int], rng: Rng, final_init_scale: float | None = None):
        if len(widths) < 2:
            raise ValueError("MLP needs at least an input and an output width")
        self.layers = [
            Linear(widths[i], widths[i + 1], rng.derive("layer", i),
                   init_scale=final_init_scale if i == len(widths) - 2 else None)
            for i in range(len(widths) - 1)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = relu(x)
        return x
