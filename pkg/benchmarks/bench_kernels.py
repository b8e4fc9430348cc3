"""Time every grid kernel under the numba and pure-numpy backends.

    python3 benchmarks/bench_kernels.py [--repeat 200] [--seed 0]

Inputs come from a generated house so sizes match real call sites. The
numba column excludes compilation (one warm-up call per kernel). Results
are also checked for equality across backends.
"""

import argparse
import time

import numpy as np

from winnav.core import N_CATEGORIES, OUTSIDE, UNKNOWN, local_offsets
from winnav.kernels import _numba, _numpy
from winnav.worldgen import LayoutPrior, generate_house


def cases(seed):
    house, graph = generate_house(LayoutPrior(), seed)
    rng = np.random.default_rng(seed)
    vp = graph.nodes[0].cell
    room_ids = np.where(house.cells >= 0, house.cells, -1).astype(np.int64)
    fwd, right = np.meshgrid(np.arange(-4, 5), np.arange(-4, 5), indexing="ij")
    fwd, right = fwd.ravel().astype(np.int64), right.ravel().astype(np.int64)
    dr, dc = local_offsets(9, 2)
    G = np.zeros((24, 24, N_CATEGORIES))
    G[..., UNKNOWN] = 1.0
    W = np.zeros((24, 24))
    mp = rng.dirichlet(np.ones(N_CATEGORIES), size=81)
    cw = rng.random(81)
    wedge = rng.integers(0, 8, size=81)
    types = rng.integers(0, 12, size=8).astype(np.int64)
    depth = rng.uniform(0.5, 4.0, size=8)
    door = np.where(rng.random(8) < 0.5, depth * 0.6, np.inf)
    return {
        "rotate_offsets": (fwd, right, 3),
        "unrotate_offsets": (fwd, right, 5),
        "raycast": (house.block_mask, house.opening_mask, room_ids, vp[0], vp[1], np.arange(8)),
        "gather_labels": (house.label_image, vp[0], vp[1], dr, dc, OUTSIDE),
        "fuse_into": (G, W, mp, 12, 12, dr, dc, cw),
        "project": (3, types, depth, door, 9, 0.5, UNKNOWN),
        "wedge_pool": (G, W + 1.0, 12, 12, dr, dc, wedge, 8),
        "nearest_room_labels": (house.cells, house.room_types_array, OUTSIDE),
    }


def _copy(args):
    return tuple(a.copy() if isinstance(a, np.ndarray) else a for a in args)


def timeit(fn, args, repeat):
    fn(*_copy(args))  # warm-up / compile
    best = float("inf")
    for _ in range(3):
        batch = [_copy(args) for _ in range(repeat)]
        t = time.perf_counter()
        for a in batch:
            fn(*a)
        best = min(best, (time.perf_counter() - t) / repeat)
    return best


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    if a is None:
        return b is None
    return np.array_equal(np.asarray(a), np.asarray(b))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    print(f"{'kernel':22s} {'numpy us':>10s} {'numba us':>10s} {'speedup':>8s}  equal")
    for name, a in cases(args.seed).items():
        f_np, f_nb = getattr(_numpy, name), getattr(_numba, name)
        a1, a2 = _copy(a), _copy(a)
        r1, r2 = f_np(*a1), f_nb(*a2)
        eq = same(r1, r2) and all(same(x, y) for x, y in zip(a1, a2))
        t_np = timeit(f_np, a, args.repeat)
        t_nb = timeit(f_nb, a, args.repeat)
        print(f"{name:22s} {t_np * 1e6:10.1f} {t_nb * 1e6:10.1f} {t_np / t_nb:8.1f}  {eq}")


if __name__ == "__main__":
    main()
