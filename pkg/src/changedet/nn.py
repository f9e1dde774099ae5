"""Small module system over the tensor engine: parameters, common layers, init.

Parameter registration follows attribute assignment order, so walking
``named_parameters()`` is deterministic. That ordering is what the optimizer
state and the checkpoint format rely on.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import (
    ConfigError,
    Tensor,
    add_row_bias,
    conv2d,
    dropout,
    group_norm,
    layer_norm_rows,
    matmul,
    relu,
    transpose,
)


class Parameter(Tensor):
    """A tensor that always participates in gradients."""

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    """Base class tracking parameters and submodules by assignment order."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        elif isinstance(value, (list, tuple)) and value and all(
                isinstance(v, Module) for v in value):
            for i, v in enumerate(value):
                self._modules[f"{name}.{i}"] = v
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield (f"{prefix}{name}", p)
        for name, m in self._modules.items():
            yield from m.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def train(self) -> "Module":
        object.__setattr__(self, "training", True)
        for m in self._modules.values():
            m.train()
        return self

    def eval(self) -> "Module":
        object.__setattr__(self, "training", False)
        for m in self._modules.values():
            m.eval()
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def param_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def kaiming(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        self.weight = Parameter(kaiming(rng, (out_features, in_features), in_features))
        self.bias = Parameter(np.zeros(out_features))

    def forward(self, x: Tensor) -> Tensor:
        return add_row_bias(matmul(x, transpose(self.weight)), self.bias)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 stride: int, rng: np.random.Generator):
        super().__init__()
        fan_in = in_channels * kernel * kernel
        self.weight = Parameter(kaiming(rng, (out_channels, in_channels, kernel, kernel), fan_in))
        self.bias = Parameter(np.zeros(out_channels))
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride)


class GroupNorm(Module):
    def __init__(self, channels: int, groups: int):
        super().__init__()
        if channels % groups != 0:
            raise ConfigError(f"channels {channels} not divisible by groups {groups}")
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.groups = groups

    def forward(self, x: Tensor) -> Tensor:
        return group_norm(x, self.groups, self.gamma, self.beta)


class LayerNorm(Module):
    def __init__(self, features: int):
        super().__init__()
        self.gamma = Parameter(np.ones(features))
        self.beta = Parameter(np.zeros(features))

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm_rows(x, self.gamma, self.beta)


class Dropout(Module):
    def __init__(self, p: float):
        super().__init__()
        self.p = p

    def forward(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        return dropout(x, self.p, rng, self.training)


class ConvNormAct(Module):
    """3x3 (or 1x1) conv followed by group norm and ReLU."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator,
                 kernel: int = 3, stride: int = 1, groups: int = 8):
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, kernel, stride, rng)
        self.norm = GroupNorm(out_channels, groups)

    def forward(self, x: Tensor) -> Tensor:
        return relu(self.norm(self.conv(x)))
