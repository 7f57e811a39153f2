"""Trainable parameter containers built on :mod:`kgadapt.autodiff`."""

from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from .autodiff import ShapeError, Tensor, add, matmul, relu


def parameter(data, name: str) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Mlp:
    """Affine layers with a rectifier between them and a linear output.

    Inputs are row-major batches: ``x`` of shape ``(rows, in_dim)`` or a
    single vector of length ``in_dim``.
    """

    def __init__(self, weights: Sequence[Tensor], biases: Sequence[Tensor]):
        if not weights or len(weights) != len(biases):
            raise ShapeError("mlp", "need at least one (weight, bias) layer")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.data.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError("mlp", f"layer {i}: weight {w.shape} / bias {b.shape}")
            if i and weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError("mlp", f"layer {i} input {w.shape[0]} != previous output {weights[i - 1].shape[1]}")
        self.weights = list(weights)
        self.biases = list(biases)

    @classmethod
    def init(cls, rng: np.random.Generator, dims: Sequence[int], name: str) -> "Mlp":
        ws, bs = [], []
        for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
            ws.append(parameter(glorot(rng, din, dout), f"{name}.{i}.weight"))
            bs.append(parameter(np.zeros(dout), f"{name}.{i}.bias"))
        return cls(ws, bs)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeError("mlp", f"input width {x.shape[-1]} != {self.in_dim}")
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = add(matmul(h, w), b)
            if i < last:
                h = relu(h)
        return h

    def parameters(self) -> Iterator[Tensor]:
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b
