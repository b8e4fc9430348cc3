"""Small float64 autodiff stack: tensors, LSTM cell, AdamW, gradient checks
and checkpoints."""

from .checkpoint import Checkpoint, CheckpointError, from_bytes, load, save, to_bytes
from .gradcheck import GradCheckReport, grad_check, rel_error
from .lstm import lstm_params, lstm_step
from .module import Module
from .optim import AdamW, AdamWConfig
from .tensor import (
    GraphError, Parameter, ShapeError, Tensor, add, concat, constant, cross_entropy, embedding, exp,
    expand, grad_enabled, log, matmul, mean, mul, no_grad, pick, relu, reshape, scale, sigmoid,
    softmax, square, sub, take, tanh, transpose, tsum,
)

__all__ = [
    "Checkpoint", "CheckpointError", "from_bytes", "load", "save", "to_bytes", "GradCheckReport",
    "grad_check", "rel_error", "lstm_params", "lstm_step", "Module", "AdamW", "AdamWConfig", "GraphError",
    "Parameter", "ShapeError", "Tensor", "add", "concat", "constant", "cross_entropy", "embedding",
    "exp", "expand", "grad_enabled", "log", "matmul", "mean", "mul", "no_grad", "pick", "relu",
    "reshape", "scale", "sigmoid", "softmax", "square", "sub", "take", "tanh", "transpose", "tsum",
]
