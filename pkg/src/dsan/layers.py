"""Shared building blocks: parameter init, layer-norm parameters, projections."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

NORM_PLACEMENTS = ("post", "pre", "none")


class ConfigError(ValueError):
    pass


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, name: str | None = None) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True, name=name)


def zeros(*shape: int, name: str | None = None) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor

    @classmethod
    def init(cls, d: int) -> "LayerNormParams":
        return cls(Tensor(np.ones(d), requires_grad=True), zeros(d))

    def __call__(self, x) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.gain": self.gain, f"{prefix}.bias": self.bias}


def project(x, weight: Tensor, norm: LayerNormParams | None, placement: str = "post",
            bias: Tensor | None = None) -> Tensor:
    """Linear projection with layer normalisation on its output ("post"),
    on its input ("pre"), or not at all ("none"). A bias is added last.
    """
    if placement == "post":
        out = norm(T.matmul(x, weight))
    elif placement == "pre":
        out = T.matmul(norm(x), weight)
    elif placement == "none":
        out = T.matmul(x, weight)
    else:
        raise ConfigError(f"unknown norm placement {placement!r}; expected one of {NORM_PLACEMENTS}")
    return out if bias is None else T.add(out, bias)
