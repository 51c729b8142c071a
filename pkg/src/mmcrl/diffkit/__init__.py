"""Small differentiable-computation kernel used by every trainable module."""
from .autodiff import (ContractError, DimensionError, Tape, Tensor, abs_, active_tape, add,
                       as_tensor, backward, clip, concat, div, einsum, exp, getitem,
                       leaky_relu, log, matmul, mean, mul, neg, norm, reshape, sqrt, square,
                       sub, sum_, tanh, trace, transpose)
from .checkpoint import CheckpointError, load_tensors, save_tensors
from .nn import DEFAULT_SLOPE, MLPParams, init_mlp, mlp_forward
from .optim import OptimizerState, optimizer_step

__all__ = [
    "ContractError", "DimensionError", "Tape", "Tensor", "abs_", "active_tape", "add",
    "as_tensor", "backward", "clip", "concat", "div", "einsum", "exp", "getitem",
    "leaky_relu", "log", "matmul", "mean", "mul", "neg", "norm", "reshape", "sqrt",
    "square", "sub", "sum_", "tanh", "trace", "transpose", "CheckpointError",
    "load_tensors", "save_tensors", "DEFAULT_SLOPE", "MLPParams", "init_mlp",
    "mlp_forward", "OptimizerState", "optimizer_step",
]
