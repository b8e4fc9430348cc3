"""Central finite-difference gradient verification."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str | None
    worst_index: tuple | None
    analytic: float
    numeric: float
    n_checked: int

    def __str__(self):
        return (f"max rel err {self.max_rel_error:.3e} at {self.worst_param}{list(self.worst_index or ())} "
                f"(analytic {self.analytic:.6e}, numeric {self.numeric:.6e}, {self.n_checked} coords)")


def rel_error(a: float, n: float, floor: float = 1e-8) -> float:
    scale = max(abs(a), abs(n))
    if scale < floor:
        return 0.0
    return abs(a - n) / scale


def grad_check(fn, params: dict[str, Tensor], epsilon: float = 1e-5, max_coords: int | None = None,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare backprop grads of the scalar ``fn()`` with central differences.

    ``max_coords`` caps the coordinates tested per parameter (sampled with
    ``rng``); by default every coordinate is checked.
    """
    for p in params.values():
        p.grad = None
    loss = fn()
    loss.backward()
    analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for k, p in params.items()}
    rng = rng or np.random.default_rng(0)
    worst = GradCheckReport(0.0, None, None, 0.0, 0.0, 0)
    n = 0
    with no_grad():
        for k, p in params.items():
            flat = p.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
            for i in coords:
                old = flat[i]
                flat[i] = old + epsilon
                fp = float(fn().data)
                flat[i] = old - epsilon
                fm = float(fn().data)
                flat[i] = old
                num = (fp - fm) / (2 * epsilon)
                ana = float(analytic[k].reshape(-1)[i])
                err = rel_error(ana, num)
                n += 1
                if err > worst.max_rel_error or worst.worst_param is None:
                    worst = GradCheckReport(err, k, tuple(int(v) for v in np.unravel_index(i, p.shape)),
                                            ana, num, 0)
    worst.n_checked = n
    for p in params.values():
        p.grad = None
    return worst
