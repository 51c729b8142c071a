"""Masked autoregressive flow gated by a learnable adjacency matrix.

Slot ``j``'s conditioner sees ``z * gate[:, j]`` where the gate is ``|A[:, j]|``
restricted to slots that precede ``j`` in the variable ordering.  Each
conditioner is a small MLP emitting a shift and a log-scale; all slot networks
are stacked so one batched contraction evaluates them together.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import diffkit as dk
from .diffkit import DEFAULT_SLOPE, DimensionError, Tensor

LOG_SCALE_BOUND = 7.0
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class LearnableAdjacency:
    """Edge weights over slots; ``weights[i, j]`` gates slot i as a parent of slot j."""

    weights: Tensor
    order: np.ndarray

    def __post_init__(self):
        L = self.weights.shape[0]
        if self.weights.shape != (L, L):
            raise DimensionError("adjacency must be square")
        if sorted(self.order.tolist()) != list(range(L)):
            raise ValueError("order must be a permutation of the slots")
        self.zero_diagonal()

    @property
    def L(self) -> int:
        return self.weights.shape[0]

    def zero_diagonal(self) -> None:
        np.fill_diagonal(self.weights.data, 0.0)

    def predecessor_mask(self) -> np.ndarray:
        pos = np.empty(self.L, dtype=int)
        pos[self.order] = np.arange(self.L)
        return (pos[:, None] < pos[None, :]).astype(float)


def init_adjacency(L: int, rng: np.random.Generator, scale: float = 0.1,
                   order=None) -> LearnableAdjacency:
    w = rng.uniform(0.5 * scale, 1.5 * scale, size=(L, L))
    return LearnableAdjacency(Tensor(w, requires_grad=True),
                              np.arange(L) if order is None else np.asarray(order))


@dataclass
class FlowParams:
    """Stacked per-slot conditioner networks; layer weights are ``(L, in, out)``."""

    weights: list[Tensor]
    biases: list[Tensor]
    slope: float = DEFAULT_SLOPE

    @property
    def L(self) -> int:
        return self.weights[0].shape[0]

    def named_parameters(self, prefix: str = "flow.") -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}w{i}"] = w
            out[f"{prefix}b{i}"] = b
        return out


def init_flow(L: int, rng: np.random.Generator, hidden=(16,), slope: float = DEFAULT_SLOPE,
              out_scale: float = 0.01) -> FlowParams:
    """Hidden layers He-initialised; the output layer starts near zero (near-identity flow)."""
    widths = [L, *hidden, 2]
    weights, biases = [], []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        std = out_scale if i == len(widths) - 2 else np.sqrt(2.0 / a)
        weights.append(Tensor(rng.normal(0.0, std, size=(L, a, b)), requires_grad=True))
        biases.append(Tensor(np.zeros((L, b)), requires_grad=True))
    return FlowParams(weights, biases, slope)


def gate_matrix(adjacency: LearnableAdjacency) -> Tensor:
    return dk.abs_(adjacency.weights) * adjacency.predecessor_mask()


def conditioner(flow: FlowParams, adjacency: LearnableAdjacency, z) -> tuple[Tensor, Tensor]:
    """Shift and clamped log-scale for every slot (each ``n x L``)."""
    z = dk.as_tensor(z)
    L = flow.L
    if z.ndim != 2 or z.shape[1] != L or adjacency.L != L:
        raise DimensionError(f"flow over {L} slots got input {z.shape} and adjacency {adjacency.L}")
    gate = gate_matrix(adjacency)
    h = dk.einsum("ni,ij,jih->njh", z, gate, flow.weights[0]) + flow.biases[0]
    for w, b in zip(flow.weights[1:], flow.biases[1:]):
        h = dk.leaky_relu(h, flow.slope)
        h = dk.einsum("njh,jhk->njk", h, w) + b
    shift = h[:, :, 0]
    log_scale = dk.clip(h[:, :, 1], -LOG_SCALE_BOUND, LOG_SCALE_BOUND)
    return shift, log_scale


def flow_forward(flow: FlowParams, adjacency: LearnableAdjacency, z_cat) -> tuple[Tensor, Tensor]:
    """Exogenous-noise estimate and per-sample log|det dε/dz|."""
    z = dk.as_tensor(z_cat)
    shift, log_scale = conditioner(flow, adjacency, z)
    eps = (z - shift) * dk.exp(-log_scale)
    return eps, -log_scale.sum(axis=1)


def flow_inverse(flow: FlowParams, adjacency: LearnableAdjacency, eps) -> np.ndarray:
    """Solve for ``z`` slot by slot in the variable ordering."""
    e = np.asarray(eps.data if isinstance(eps, Tensor) else eps, dtype=float)
    if e.ndim != 2 or e.shape[1] != flow.L:
        raise DimensionError(f"expected n x {flow.L} noise, got {e.shape}")
    z = np.zeros_like(e)
    for j in adjacency.order:
        shift, log_scale = conditioner(flow, adjacency, z)
        z[:, j] = e[:, j] * np.exp(log_scale.data[:, j]) + shift.data[:, j]
    return z


def nll_loss(eps, log_det) -> Tensor:
    """Standard-Gaussian negative log-likelihood, batch mean."""
    eps, log_det = dk.as_tensor(eps), dk.as_tensor(log_det)
    if eps.ndim != 2 or log_det.shape != (eps.shape[0],):
        raise DimensionError(f"eps {eps.shape} and log_det {log_det.shape} disagree")
    L = eps.shape[1]
    per_sample = 0.5 * dk.square(eps).sum(axis=1) + 0.5 * L * LOG_2PI - log_det
    return per_sample.mean()


def _weights(adjacency) -> Tensor:
    return adjacency.weights if isinstance(adjacency, LearnableAdjacency) else dk.as_tensor(adjacency)


def sparsity_loss(adjacency) -> Tensor:
    return dk.abs_(_weights(adjacency)).sum()


def acyclicity_loss(adjacency, cst: float | None = None) -> Tensor:
    """``tr((I + cst * A∘A)^L) - L`` by repeated multiplication; ``cst`` defaults to 1/L."""
    A = _weights(adjacency)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError("adjacency must be square")
    L = A.shape[0]
    cst = 1.0 / L if cst is None else cst
    if cst <= 0:
        raise ValueError("cst must be positive")
    base = np.eye(L) + cst * dk.square(A)
    power = base
    for _ in range(L - 1):
        power = dk.matmul(power, base)
    if np.max(np.abs(power.data)) > 1e150:
        warnings.warn("acyclicity matrix power is near float64 overflow", RuntimeWarning)
    return dk.trace(power) - float(L)


def binarize_adjacency(adjacency, tau: float) -> np.ndarray:
    if tau <= 0:
        raise ValueError("tau must be positive")
    w = _weights(adjacency).data
    return (np.abs(w) > tau).astype(float)


def write_adjacency(dense_path, edges_path, weights: np.ndarray, tau: float) -> None:
    np.savetxt(dense_path, weights, fmt="%.10g")
    rows, cols = np.nonzero(np.abs(weights) > tau)
    with open(edges_path, "w") as fh:
        fh.write(f"# parent child weight (|w| > {tau})\n")
        for r, c in zip(rows, cols):
            fh.write(f"{r} {c} {weights[r, c]:.10g}\n")
