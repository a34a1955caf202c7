"""Layer building blocks shared by the backbone, adapters, and gates."""

from __future__ import annotations

import hashlib

import numpy as np

from . import _kernels as K
from .tensor import Tensor, add, matmul


def he_uniform(rng: np.random.Generator, fan_in: int, shape: tuple[int, int]) -> np.ndarray:
    """U(-b, b) with b = sqrt(6 / fan_in)."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    """Dense layer; weight is (in, out), bias a (1, out) row."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None, zero_init: bool = False):
        if zero_init:
            w = np.zeros((in_dim, out_dim))
        else:
            if rng is None:
                raise ValueError("rng required unless zero_init")
            w = he_uniform(rng, in_dim, (in_dim, out_dim))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros((1, out_dim)), requires_grad=True)

    @classmethod
    def from_arrays(cls, weight: np.ndarray, bias: np.ndarray, trainable: bool = False) -> "Linear":
        """Build a layer from existing arrays; frozen unless trainable."""
        layer = cls.__new__(cls)
        layer.weight = Tensor(weight, requires_grad=trainable)
        layer.bias = Tensor(bias, requires_grad=trainable)
        return layer

    @property
    def in_dim(self) -> int:
        return self.weight.rows

    @property
    def out_dim(self) -> int:
        return self.weight.cols

    def forward(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.weight), self.bias)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Frozen-path forward on raw arrays; no tape traffic."""
        return K.add_bias(K.matmul(x, self.weight.data), self.bias.data)

    def params(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]

    def freeze(self) -> None:
        self.weight.requires_grad = False
        self.bias.requires_grad = False


def params_checksum(params: list[tuple[str, Tensor]]) -> str:
    """sha256 over names, shapes, and little-endian float64 bytes."""
    h = hashlib.sha256()
    for name, t in params:
        h.update(name.encode())
        h.update(np.array(t.data.shape, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return h.hexdigest()
