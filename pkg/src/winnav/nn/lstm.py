"""LSTM cell on top of the autodiff ops. Gate order in the fused weight is
input, forget, output, candidate."""

from __future__ import annotations

import numpy as np

from .tensor import Parameter, ShapeError, Tensor, add, concat, matmul, mul, sigmoid, tanh


def lstm_params(n_in: int, n_hidden: int, rng: np.random.Generator, prefix: str = "lstm",
                forget_bias: float = 1.0) -> dict[str, Parameter]:
    k = 1.0 / np.sqrt(n_hidden)
    W = rng.uniform(-k, k, size=(n_in + n_hidden, 4 * n_hidden))
    b = np.zeros(4 * n_hidden)
    b[n_hidden:2 * n_hidden] = forget_bias
    return {f"{prefix}.W": Parameter(W, f"{prefix}.W"), f"{prefix}.b": Parameter(b, f"{prefix}.b")}


def lstm_step(x: Tensor, h_prev: Tensor, c_prev: Tensor, W: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One step for a batch: x (B, n_in), h/c (B, H), W (n_in + H, 4H), b (4H,)."""
    H = h_prev.shape[-1]
    if (x.ndim != 2 or h_prev.shape != c_prev.shape or h_prev.shape[0] != x.shape[0]
            or W.shape != (x.shape[1] + H, 4 * H) or b.shape != (4 * H,)):
        raise ShapeError(f"lstm_step: incompatible shapes x{x.shape} h{h_prev.shape} "
                         f"c{c_prev.shape} W{W.shape} b{b.shape}")
    z = add(matmul(concat([x, h_prev], axis=1), W), b)
    i = sigmoid(z[:, 0:H])
    f = sigmoid(z[:, H:2 * H])
    o = sigmoid(z[:, 2 * H:3 * H])
    g = tanh(z[:, 3 * H:4 * H])
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    return h, c
