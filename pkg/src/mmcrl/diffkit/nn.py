"""Multilayer perceptrons with leaky-rectifier activations."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import DimensionError, Tensor, add, as_tensor, leaky_relu, matmul

DEFAULT_SLOPE = 0.2


@dataclass
class MLPParams:
    """Layer weights (``in x out``) and biases; ``None`` biases mean bias-free.

    Every hidden layer is followed by a leaky rectifier.  The final layer is
    affine unless ``final_activation`` is set.
    """

    weights: list[Tensor]
    biases: list[Tensor | None]
    slope: float = DEFAULT_SLOPE
    final_activation: bool = False

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise DimensionError("one bias entry per layer is required")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2:
                raise DimensionError(f"layer {i} weight must be a matrix")
            if b is not None and b.shape != (w.shape[1],):
                raise DimensionError(f"layer {i} bias shape {b.shape} != ({w.shape[1]},)")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise DimensionError(f"layer {i} input {w.shape[0]} != previous output "
                                     f"{self.weights[i - 1].shape[1]}")

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def parameters(self) -> list[Tensor]:
        return [t for pair in zip(self.weights, self.biases) for t in pair if t is not None]

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}w{i}"] = w
            if b is not None:
                out[f"{prefix}b{i}"] = b
        return out


def mlp_forward(params: MLPParams, x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise DimensionError(f"input shape {x.shape} does not match MLP input width {params.in_dim}")
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = matmul(h, w)
        if b is not None:
            h = add(h, b)
        if i < last or params.final_activation:
            h = leaky_relu(h, params.slope)
    return h


def init_mlp(widths, rng: np.random.Generator, bias: bool = True,
             slope: float = DEFAULT_SLOPE, trainable: bool = True,
             final_activation: bool = False) -> MLPParams:
    """He-style Gaussian initialisation, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        weights.append(Tensor(w, requires_grad=trainable))
        biases.append(Tensor(np.zeros(fan_out), requires_grad=trainable) if bias else None)
    return MLPParams(weights, biases, slope=slope, final_activation=final_activation)
