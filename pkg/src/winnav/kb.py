"""Locality knowledge: room-pair relations, the room adjacency matrix and
ground-truth locality maps used to supervise the predictor.

The image-matching step of the original pipeline is replaced by a cheap
descriptor: a histogram over (room type, quantized depth) of the eight
panoramic sectors, compared by normalized histogram intersection.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import kernels
from .core import (
    CELL_SIZE, N_CATEGORIES, N_SECTORS, OUTSIDE, ROOM_LABELS, HouseLayout, LocalityMap, Pose,
    _cell_ratio, local_offsets,
)
from .worldgen import observe, viewpoint_cell

DEPTH_BINS = np.array([1.0, 2.0, 4.0])  # units; four bins
MATCH_THRESHOLD = 0.6
MIN_SEPARATION = 2.0
DIST_QUANTUM = 1e-9  # integer distance sums keep merges order-independent
RELATIONS = ("same_room", "navigable", "neighboring_occluded", "unrelated")


# ------------------------------------------------------------- descriptors

def descriptor(house: HouseLayout, pose: Pose) -> np.ndarray:
    """(C * 4,) counts of sectors per (room type, depth bin)."""
    obs = observe(house, pose)
    bins = np.searchsorted(DEPTH_BINS, obs.depth, side="right")
    d = np.zeros(N_CATEGORIES * (len(DEPTH_BINS) + 1))
    np.add.at(d, obs.room_type * (len(DEPTH_BINS) + 1) + bins, 1.0)
    return d


def match_score(d1: np.ndarray, d2: np.ndarray) -> float:
    return float(np.minimum(d1, d2).sum() / max(d1.sum(), d2.sum(), 1e-12))


def sample_viewpoints(house: HouseLayout, min_separation: float = MIN_SEPARATION) -> list[Pose]:
    """Lattice samples over room cells, kept greedily while every pair stays
    at least ``min_separation`` apart. Each room's lattice is anchored on its
    centre cell and the centres are offered first."""
    stride = max(1, int(math.ceil(min_separation / house.cell_size - 1e-9)))
    centres, rest = [], []
    for rm in house.rooms:
        cr, cc = viewpoint_cell(rm)
        centres.append((cr, cc))
        r0, c0, r1, c1 = rm.bbox
        for r in range(cr - ((cr - r0) // stride) * stride, r1 + 1, stride):
            for c in range(cc - ((cc - c0) // stride) * stride, c1 + 1, stride):
                if (r, c) != (cr, cc):
                    rest.append((r, c))
    kept: list[tuple[int, int]] = []
    lim = (min_separation / house.cell_size) ** 2 - 1e-9
    for r, c in centres + sorted(rest):
        if all((r - kr) ** 2 + (c - kc) ** 2 >= lim for kr, kc in kept):
            kept.append((r, c))
    return [Pose.at_cell(r, c, 0, house.cell_size) for r, c in kept]


def classify_pair(house: HouseLayout, p1: Pose, p2: Pose, match_threshold: float = MATCH_THRESHOLD,
                  min_separation: float = MIN_SEPARATION, g: int = 5, s: float = CELL_SIZE) -> str:
    """Relation between two candidate poses from descriptor match and distance."""
    score = match_score(descriptor(house, Pose(p1.position, 0)), descriptor(house, Pose(p2.position, 0)))
    dist = math.dist(p1.position, p2.position)
    if score >= match_threshold:
        return "same_room" if dist < min_separation else "navigable"
    if dist <= g * s / 2.0:
        return "neighboring_occluded"
    return "unrelated"


# -------------------------------------------------------- adjacency matrix

@dataclass(eq=False)
class AdjacencyMatrix:
    connectivity: np.ndarray  # (C, C) int64
    navigability: np.ndarray
    visibility: np.ndarray
    area_sum: np.ndarray  # (C,) float, units^2
    room_count: np.ndarray  # (C,) int64
    dist_sum: np.ndarray  # (C, C) int64 fixed point (DIST_QUANTUM), centre-to-centre over same-house pairs
    dist_count: np.ndarray  # (C, C) int64
    n_houses: int = 0

    @classmethod
    def zeros(cls) -> "AdjacencyMatrix":
        C = N_CATEGORIES
        z = lambda: np.zeros((C, C), np.int64)  # noqa: E731
        return cls(z(), z(), z(), np.zeros(C), np.zeros(C, np.int64), z(), z(), 0)

    def __add__(self, other: "AdjacencyMatrix") -> "AdjacencyMatrix":
        return AdjacencyMatrix(
            self.connectivity + other.connectivity, self.navigability + other.navigability,
            self.visibility + other.visibility, self.area_sum + other.area_sum,
            self.room_count + other.room_count, self.dist_sum + other.dist_sum,
            self.dist_count + other.dist_count, self.n_houses + other.n_houses)

    def mean_room_size(self) -> np.ndarray:
        return np.where(self.room_count > 0, self.area_sum / np.maximum(self.room_count, 1), 0.0)

    def mean_distance(self) -> np.ndarray:
        return np.where(self.dist_count > 0, self.dist_sum * DIST_QUANTUM / np.maximum(self.dist_count, 1), 0.0)

    def type_marginal(self) -> np.ndarray:
        """Share of floor area per category."""
        tot = self.area_sum.sum()
        return self.area_sum / tot if tot > 0 else self.area_sum

    def majority_type(self) -> int:
        return int(np.argmax(self.area_sum))

    def equals(self, other: "AdjacencyMatrix") -> bool:
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in _FIELDS) \
            and self.n_houses == other.n_houses


_FIELDS = ("connectivity", "navigability", "visibility", "area_sum", "room_count", "dist_sum", "dist_count")


def _bump(m, ta, tb):
    m[ta, tb] += 1
    if ta != tb:
        m[tb, ta] += 1


def wall_neighbours(house: HouseLayout) -> set[tuple[int, int]]:
    """Unordered room pairs on opposite sides of a single wall cell."""
    cells = house.cells
    pairs = set()
    H, W = cells.shape
    for r, c in zip(*np.nonzero(cells < 0)):
        for (ar, ac), (br, bc) in (((r, c - 1), (r, c + 1)), ((r - 1, c), (r + 1, c))):
            if 0 <= ar < H and 0 <= ac < W and 0 <= br < H and 0 <= bc < W:
                a, b = int(cells[ar, ac]), int(cells[br, bc])
                if a >= 0 and b >= 0 and a != b:
                    pairs.add((min(a, b), max(a, b)))
    return pairs


def visible_pairs(house: HouseLayout) -> set[tuple[int, int]]:
    """Room pairs joined by a sector ray from either room's centre cell."""
    pairs = set()
    ids = np.where(house.cells >= 0, house.cells, -1)
    dirs = np.arange(N_SECTORS)
    for rm in house.rooms:
        r, c = viewpoint_cell(rm)
        _, last, _ = kernels.raycast(house.block_mask, house.opening_mask, ids, r, c, dirs)
        for b in set(int(v) for v in last):
            if b != rm.id:
                pairs.add((min(rm.id, b), max(rm.id, b)))
    return pairs


def house_adjacency(house: HouseLayout) -> AdjacencyMatrix:
    kb = AdjacencyMatrix.zeros()
    t = house.room_types_array
    for a, b in wall_neighbours(house):
        _bump(kb.connectivity, t[a], t[b])
    doors = set()
    for (pa, pb) in house.doors:
        a, b = int(house.cells[pa]), int(house.cells[pb])
        doors.add((min(a, b), max(a, b)))
    for a, b in doors:
        _bump(kb.navigability, t[a], t[b])
    for a, b in visible_pairs(house):
        _bump(kb.visibility, t[a], t[b])
    area = house.cell_size ** 2
    for rm in house.rooms:
        kb.area_sum[rm.type] += rm.area_cells * area
        kb.room_count[rm.type] += 1
    for ra, rb in combinations(house.rooms, 2):
        d = int(round(math.dist(ra.centroid, rb.centroid) / DIST_QUANTUM))
        kb.dist_sum[ra.type, rb.type] += d
        kb.dist_count[ra.type, rb.type] += 1
        if ra.type != rb.type:
            kb.dist_sum[rb.type, ra.type] += d
            kb.dist_count[rb.type, ra.type] += 1
    kb.n_houses = 1
    return kb


def build_adjacency(houses) -> AdjacencyMatrix:
    houses = list(houses)
    if not houses:
        raise ValueError("build_adjacency needs at least one house")
    kb = AdjacencyMatrix.zeros()
    for h in houses:
        kb = kb + house_adjacency(h)
    return kb


# ------------------------------------------------------ ground-truth maps

def ground_truth_labels(house: HouseLayout, pose: Pose, g: int, s: float = CELL_SIZE) -> np.ndarray:
    """(g, g) category indices of the agent-centric map, row 0 ahead."""
    dr, dc = local_offsets(g, pose.heading, _cell_ratio(s, house.cell_size))
    r, c = pose.cell(house.cell_size)
    return kernels.gather_labels(house.label_image, r, c, dr, dc, OUTSIDE).reshape(g, g)


def ground_truth_locality_map(house: HouseLayout, pose: Pose, g: int, s: float = CELL_SIZE) -> LocalityMap:
    return LocalityMap.from_labels(ground_truth_labels(house, pose, g, s), s)


# ---------------------------------------------------------- persistence

KB_FORMAT = "WINKB 1"


def _write_matrix(out, name, m):
    out.write(f"{name} {m.shape[0]} {m.shape[1] if m.ndim > 1 else 1}\n")
    for row in np.atleast_2d(m) if m.ndim > 1 else m[:, None]:
        out.write(" ".join(repr(int(v)) if m.dtype.kind == "i" else repr(float(v)) for v in row) + "\n")


def dump_kb(kb: AdjacencyMatrix) -> str:
    out = io.StringIO()
    out.write(f"{KB_FORMAT}\nhouses {kb.n_houses}\nlabels {' '.join(ROOM_LABELS)}\n")
    for k in _FIELDS:
        _write_matrix(out, k, getattr(kb, k))
    out.write("end\n")
    return out.getvalue()


def load_kb(text: str) -> AdjacencyMatrix:
    lines = iter(text.splitlines())
    if next(lines).strip() != KB_FORMAT:
        raise ValueError(f"not a {KB_FORMAT} file")
    n_houses = int(next(lines).split()[1])
    labels = next(lines).split()[1:]
    if tuple(labels) != ROOM_LABELS:
        raise ValueError("category labels differ from this build")
    kb = AdjacencyMatrix.zeros()
    kb.n_houses = n_houses
    for k in _FIELDS:
        name, rows, cols = next(lines).split()
        if name != k:
            raise ValueError(f"expected matrix {k!r}, got {name!r}")
        ref = getattr(kb, k)
        conv = int if ref.dtype.kind == "i" else float
        vals = np.array([[conv(v) for v in next(lines).split()] for _ in range(int(rows))], dtype=ref.dtype)
        setattr(kb, k, vals.reshape(ref.shape))
    if next(lines).strip() != "end":
        raise ValueError("missing end marker")
    return kb


def heatmap_csv(kb: AdjacencyMatrix, which: str = "navigability") -> str:
    m = getattr(kb, which)
    out = io.StringIO()
    out.write("type," + ",".join(ROOM_LABELS) + "\n")
    for lab, row in zip(ROOM_LABELS, m):
        out.write(lab + "," + ",".join(str(int(v)) for v in row) + "\n")
    return out.getvalue()
