"""AdamW with bias correction and decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Parameter


@dataclass
class AdamWConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    clip_norm: float | None = None


class AdamW:
    def __init__(self, params: dict[str, Parameter], config: AdamWConfig | None = None):
        self.params = params
        self.config = config or AdamWConfig()
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float((p.grad ** 2).sum()) for p in self.params.values() if p.grad is not None)))

    def step(self) -> float:
        """Apply one update from the accumulated grads; returns the pre-clip grad norm."""
        cfg = self.config
        norm = self.grad_norm()
        mult = 1.0
        if cfg.clip_norm is not None and norm > cfg.clip_norm:
            mult = cfg.clip_norm / norm
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - cfg.beta1 ** t
        bc2 = 1.0 - cfg.beta2 ** t
        for k, p in self.params.items():
            g = np.zeros_like(p.data) if p.grad is None else p.grad * mult
            m, v = self.m[k], self.v[k]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            if cfg.weight_decay:
                p.data -= cfg.lr * cfg.weight_decay * p.data
            p.data -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        return norm

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for k in self.params:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out

    def load_state(self, arrays: dict[str, np.ndarray], step: int) -> None:
        for k in self.params:
            self.m[k] = arrays[f"adam.m.{k}"].copy()
            self.v[k] = arrays[f"adam.v.{k}"].copy()
        self.step_count = step
