"""Named parameter registry shared by the models."""

from __future__ import annotations

import numpy as np

from .checkpoint import Checkpoint, CheckpointError
from .tensor import Parameter


class Module:
    kind = "module"

    def __init__(self):
        self.params: dict[str, Parameter] = {}

    def add_param(self, name: str, value: np.ndarray) -> Parameter:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name}")
        p = Parameter(value, name)
        self.params[name] = p
        return p

    def n_params(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = [k for k in self.params if k not in arrays]
        if missing:
            raise CheckpointError(f"checkpoint lacks parameters {missing[:4]}")
        for k, p in self.params.items():
            a = arrays[k]
            if a.shape != p.data.shape:
                raise CheckpointError(f"parameter {k}: checkpoint shape {a.shape} != model {p.data.shape}")
            p.data[...] = a

    def checkpoint(self, step: int = 0, meta: dict | None = None, extra: dict | None = None) -> Checkpoint:
        arrays = {f"param.{k}": v for k, v in self.arrays().items()}
        if extra:
            arrays.update(extra)
        return Checkpoint(self.kind, arrays, step, dict(meta or {}))

    def load_checkpoint(self, ck: Checkpoint) -> None:
        if ck.kind != self.kind:
            raise CheckpointError(f"checkpoint holds a {ck.kind!r} model, expected {self.kind!r}")
        self.load_arrays({k[6:]: v for k, v in ck.arrays.items() if k.startswith("param.")})
