"""Shared domain types and geometry: houses, poses, navigation graphs,
categorical locality maps, the world-frame global grid and the rigid
agent-frame <-> world-frame cell transform.
"""

from __future__ import annotations

import heapq
import io
import math
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property, lru_cache
from typing import Iterable

import numpy as np

from . import kernels

CELL_SIZE = 0.5
MAP_CELL_SIZE = 2 * CELL_SIZE  # default locality-map cell
N_SECTORS = 8
SECTOR_DEG = 360.0 / N_SECTORS

WALL = -1
OUTSIDE_CELL = -2


class RoomType(IntEnum):
    BATHROOM = 0
    BEDROOM = 1
    KITCHEN = 2
    LIVING_ROOM = 3
    DINING_ROOM = 4
    HALLWAY = 5
    CLOSET = 6
    OFFICE = 7
    LAUNDRY = 8
    GARAGE = 9
    ENTRYWAY = 10
    STAIRS = 11
    UNKNOWN = 12
    OUTSIDE = 13

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "RoomType":
        try:
            return cls[label.upper()]
        except KeyError:
            raise ValueError(f"unknown room type {label!r}") from None


N_CATEGORIES = len(RoomType)
N_ROOM_TYPES = 12
UNKNOWN = int(RoomType.UNKNOWN)
OUTSIDE = int(RoomType.OUTSIDE)
ROOM_LABELS = tuple(t.label for t in RoomType)


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Room:
    id: int
    type: RoomType
    bbox: tuple[int, int, int, int]  # r0, c0, r1, c1 inclusive
    centroid: tuple[float, float]  # world units (x east, y south)

    @property
    def area_cells(self) -> int:
        r0, c0, r1, c1 = self.bbox
        return (r1 - r0 + 1) * (c1 - c0 + 1)


@dataclass(frozen=True, eq=False)
class HouseLayout:
    width: int
    height: int
    cell_size: float
    cells: np.ndarray  # (height, width) room id, WALL or OUTSIDE_CELL
    rooms: tuple[Room, ...]
    doors: tuple[tuple[tuple[int, int], tuple[int, int]], ...]

    @cached_property
    def opening_cells(self) -> tuple[tuple[int, int], ...]:
        """Wall cells made passable by a door (the cell between the pair)."""
        return tuple(((a[0] + b[0]) // 2, (a[1] + b[1]) // 2) for a, b in self.doors)

    @cached_property
    def opening_mask(self) -> np.ndarray:
        m = np.zeros(self.cells.shape, dtype=bool)
        for r, c in self.opening_cells:
            m[r, c] = True
        return m

    @cached_property
    def block_mask(self) -> np.ndarray:
        return (self.cells < 0) & ~self.opening_mask

    @cached_property
    def room_types_array(self) -> np.ndarray:
        return np.array([int(r.type) for r in self.rooms], dtype=np.int64)

    @cached_property
    def label_image(self) -> np.ndarray:
        """Per-cell category: room type, wall cells resolved to the nearer room."""
        return kernels.nearest_room_labels(self.cells, self.room_types_array, OUTSIDE)

    def room_at(self, row: int, col: int) -> int:
        if not (0 <= row < self.height and 0 <= col < self.width):
            return OUTSIDE_CELL
        return int(self.cells[row, col])

    def equals(self, other: "HouseLayout") -> bool:
        return (
            self.width == other.width and self.height == other.height
            and self.cell_size == other.cell_size
            and np.array_equal(self.cells, other.cells)
            and self.rooms == other.rooms and self.doors == other.doors
        )


@dataclass(frozen=True)
class Pose:
    position: tuple[float, float]  # world units: x east, y south
    heading: int  # sector index, 0 = north, clockwise

    def __post_init__(self):
        if not 0 <= self.heading < N_SECTORS:
            raise GeometryError(f"heading {self.heading} outside 0..{N_SECTORS - 1}")

    def cell(self, cell_size: float = CELL_SIZE) -> tuple[int, int]:
        x, y = self.position
        return int(math.floor(y / cell_size)), int(math.floor(x / cell_size))

    @classmethod
    def at_cell(cls, row: int, col: int, heading: int = 0, cell_size: float = CELL_SIZE) -> "Pose":
        return cls(((col + 0.5) * cell_size, (row + 0.5) * cell_size), heading)

    def rotated(self, quarter_turns: int) -> "Pose":
        return Pose(self.position, (self.heading + 2 * quarter_turns) % N_SECTORS)


def cell_center(row: int, col: int, cell_size: float = CELL_SIZE) -> tuple[float, float]:
    return ((col + 0.5) * cell_size, (row + 0.5) * cell_size)


def direction_sector(dx: float, dy: float) -> int:
    """World sector (0 = north, clockwise) nearest the vector (dx east, dy south)."""
    angle = math.degrees(math.atan2(dx, -dy)) % 360.0
    return int(math.floor(angle / SECTOR_DEG + 0.5)) % N_SECTORS


def orientation_encoding(theta_sectors: float, phi: float = 0.0) -> np.ndarray:
    th = math.radians(theta_sectors * SECTOR_DEG)
    return np.array([math.cos(th), math.sin(th), math.cos(phi), math.sin(phi)])


@dataclass(frozen=True)
class Viewpoint:
    room: int
    position: tuple[float, float]
    cell: tuple[int, int]


@dataclass(frozen=True, eq=False)
class NavGraph:
    nodes: dict[int, Viewpoint]
    edges: dict[tuple[int, int], float]  # keyed (a, b) with a < b

    @cached_property
    def adjacency(self) -> dict[int, list[tuple[int, float]]]:
        adj: dict[int, list[tuple[int, float]]] = {v: [] for v in self.nodes}
        for (a, b), length in sorted(self.edges.items()):
            adj[a].append((b, length))
            adj[b].append((a, length))
        return adj

    def neighbors(self, v: int) -> list[int]:
        self._check(v)
        return [n for n, _ in self.adjacency[v]]

    def edge_length(self, a: int, b: int) -> float:
        return self.edges[(a, b) if a < b else (b, a)]

    def _check(self, v: int) -> None:
        if v not in self.nodes:
            raise KeyError(f"unknown viewpoint {v}")

    @cached_property
    def _distance_cache(self) -> dict[int, dict[int, float]]:
        return {}

    def distances_from(self, source: int) -> dict[int, float]:
        self._check(source)
        cache = self._distance_cache
        if source not in cache:
            cache[source] = _dijkstra(self.adjacency, source)[0]
        return cache[source]

    def equals(self, other: "NavGraph") -> bool:
        return self.nodes == other.nodes and self.edges == other.edges


def _dijkstra(adj, source):
    dist = {source: 0.0}
    prev: dict[int, int] = {}
    heap = [(0.0, source)]
    done = set()
    while heap:
        d, v = heapq.heappop(heap)
        if v in done:
            continue
        done.add(v)
        for n, w in adj[v]:
            nd = d + w
            if n not in dist or nd < dist[n] - 1e-12:
                dist[n] = nd
                prev[n] = v
                heapq.heappush(heap, (nd, n))
    return dist, prev


def geodesic_distance(graph: NavGraph, a: int, b: int) -> float:
    """Shortest-path length along nav-graph edges (units)."""
    graph._check(a)
    graph._check(b)
    if a == b:
        return 0.0
    d = graph.distances_from(a)
    if b not in d:
        raise GeometryError(f"viewpoint {b} unreachable from {a}")
    return d[b]


def shortest_path(graph: NavGraph, a: int, b: int) -> list[int]:
    graph._check(a)
    graph._check(b)
    _, prev = _dijkstra(graph.adjacency, b)
    if a != b and a not in prev:
        raise GeometryError(f"viewpoint {b} unreachable from {a}")
    path = [a]
    while path[-1] != b:
        path.append(prev[path[-1]])
    return path


def hop_distances(graph: NavGraph, source: int) -> dict[int, int]:
    hops = {source: 0}
    frontier = [source]
    while frontier:
        nxt = []
        for v in frontier:
            for n in graph.neighbors(v):
                if n not in hops:
                    hops[n] = hops[v] + 1
                    nxt.append(n)
        frontier = nxt
    return hops


# ---------------------------------------------------------------- transforms

def _cell_ratio(s: float, cell_size: float) -> int:
    ratio = s / cell_size
    k = int(round(ratio))
    if k < 1 or abs(ratio - k) > 1e-9:
        raise GeometryError(f"map cell side {s} must be a positive multiple of cell size {cell_size}")
    return k


@lru_cache(maxsize=256)
def local_offsets(g: int, heading: int, ratio: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """World (drow, dcol) offsets of every agent-frame cell, flattened row-major.

    Quarter-turn headings are exact integer rotations; 45 degree headings
    use a three-shear rotation, each shear rounded to the nearest cell
    (ties to the lower index), which keeps the map one-to-one.
    """
    if g < 1 or g % 2 == 0:
        raise GeometryError(f"grid size g must be odd, got {g}")
    c = g // 2
    rows, cols = np.divmod(np.arange(g * g), g)
    fwd = (c - rows) * ratio
    right = (cols - c) * ratio
    dr, dc = kernels.rotate_offsets(fwd, right, heading)
    dr.setflags(write=False)
    dc.setflags(write=False)
    return dr, dc


def local_to_global(pose: Pose, local_cell: tuple[int, int], g: int, s: float = CELL_SIZE,
                    shape: tuple[int, int] | None = None,
                    cell_size: float = CELL_SIZE) -> tuple[int, int] | None:
    """Global cell under an agent-frame cell; ``None`` when outside ``shape``."""
    r, c = local_cell
    if not (0 <= r < g and 0 <= c < g):
        raise GeometryError(f"local cell {local_cell} outside {g}x{g} map")
    dr, dc = local_offsets(g, pose.heading, _cell_ratio(s, cell_size))
    ar, ac = pose.cell(cell_size)
    i, j = ar + int(dr[r * g + c]), ac + int(dc[r * g + c])
    if shape is not None and not (0 <= i < shape[0] and 0 <= j < shape[1]):
        return None
    return i, j


def global_to_local(pose: Pose, global_cell: tuple[int, int], g: int, s: float = CELL_SIZE,
                    cell_size: float = CELL_SIZE) -> tuple[int, int] | None:
    """Inverse of :func:`local_to_global`; ``None`` when outside the g x g map."""
    ratio = _cell_ratio(s, cell_size)
    ar, ac = pose.cell(cell_size)
    f, rt = kernels.unrotate_offsets(np.array([global_cell[0] - ar]), np.array([global_cell[1] - ac]),
                                     pose.heading)
    f, rt = int(f[0]), int(rt[0])
    if f % ratio or rt % ratio:
        return None
    c = g // 2
    r, col = c - f // ratio, c + rt // ratio
    if not (0 <= r < g and 0 <= col < g):
        return None
    return r, col


# ------------------------------------------------------------------- maps

@dataclass(frozen=True, eq=False)
class LocalityMap:
    """Agent-centric g x g map of category distributions; row 0 is ahead."""
    probs: np.ndarray  # (g, g, C)
    s: float = CELL_SIZE

    def __post_init__(self):
        p = self.probs
        if p.ndim != 3 or p.shape[0] != p.shape[1] or p.shape[0] % 2 == 0 or p.shape[2] != N_CATEGORIES:
            raise GeometryError(f"locality map must be (g, g, {N_CATEGORIES}) with odd g, got {p.shape}")

    @property
    def g(self) -> int:
        return self.probs.shape[0]

    @classmethod
    def from_labels(cls, labels: np.ndarray, s: float = CELL_SIZE) -> "LocalityMap":
        return cls(one_hot(labels), s)

    @classmethod
    def unknown(cls, g: int, s: float = CELL_SIZE) -> "LocalityMap":
        return cls.from_labels(np.full((g, g), UNKNOWN), s)

    def argmax(self) -> np.ndarray:
        return self.probs.argmax(axis=2)


def one_hot(labels: np.ndarray, n: int = N_CATEGORIES) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros(labels.shape + (n,))
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


@dataclass(frozen=True, eq=False)
class GlobalGrid:
    """World-frame grid of fused category distributions.

    ``weight`` is the accumulated observation weight per cell; confidence is
    ``weight / (1 + weight)``, exactly 0 for never-observed cells.
    """
    probs: np.ndarray  # (H, W, C)
    weight: np.ndarray  # (H, W)
    origin: tuple[int, int] = (0, 0)

    @classmethod
    def empty(cls, height: int, width: int | None = None) -> "GlobalGrid":
        width = height if width is None else width
        probs = np.zeros((height, width, N_CATEGORIES))
        probs[..., UNKNOWN] = 1.0
        return cls(probs, np.zeros((height, width)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.weight.shape

    @property
    def confidence(self) -> np.ndarray:
        return self.weight / (1.0 + self.weight)

    def copy(self) -> "GlobalGrid":
        return GlobalGrid(self.probs.copy(), self.weight.copy(), self.origin)


def fuse_into_global(grid: GlobalGrid, lmap: LocalityMap, pose: Pose,
                     confidence_weights: np.ndarray | None = None,
                     cell_size: float = CELL_SIZE) -> GlobalGrid:
    """Return a new grid with ``lmap`` fused in by confidence-weighted averaging."""
    out = grid.copy()
    fuse_inplace(out, lmap.probs, pose, confidence_weights, lmap.s, cell_size)
    return out


def fuse_inplace(grid: GlobalGrid, map_probs: np.ndarray, pose: Pose,
                 confidence_weights: np.ndarray | None = None, s: float = CELL_SIZE,
                 cell_size: float = CELL_SIZE) -> None:
    g = map_probs.shape[0]
    dr, dc = local_offsets(g, pose.heading, _cell_ratio(s, cell_size))
    w = np.ones(g * g) if confidence_weights is None else np.asarray(confidence_weights, float).ravel()
    r, c = pose.cell(cell_size)
    kernels.fuse_into(grid.probs, grid.weight, map_probs.reshape(g * g, -1),
                      r - grid.origin[0], c - grid.origin[1], dr, dc, w)


# ------------------------------------------------------------ serialization

HOUSE_FORMAT = "WINHOUSE 1"


def _cell_token(v: int) -> str:
    return "#" if v == WALL else "." if v == OUTSIDE_CELL else str(v)


def _parse_cell(tok: str) -> int:
    return WALL if tok == "#" else OUTSIDE_CELL if tok == "." else int(tok)


def dump_house(house: HouseLayout, graph: NavGraph) -> str:
    """Serialize a house and its nav graph to the line-oriented text format."""
    out = io.StringIO()
    w = out.write
    w(f"{HOUSE_FORMAT}\n")
    w(f"size {house.width} {house.height} {house.cell_size!r}\n")
    w(f"cells {house.height}\n")
    for row in house.cells:
        w(" ".join(_cell_token(int(v)) for v in row) + "\n")
    w(f"rooms {len(house.rooms)}\n")
    for rm in house.rooms:
        r0, c0, r1, c1 = rm.bbox
        w(f"{rm.id} {rm.type.label} {r0} {c0} {r1} {c1} {rm.centroid[0]!r} {rm.centroid[1]!r}\n")
    w(f"doors {len(house.doors)}\n")
    for (a, b) in house.doors:
        w(f"{a[0]} {a[1]} {b[0]} {b[1]}\n")
    w(f"nodes {len(graph.nodes)}\n")
    for vid in sorted(graph.nodes):
        vp = graph.nodes[vid]
        w(f"{vid} {vp.room} {vp.position[0]!r} {vp.position[1]!r} {vp.cell[0]} {vp.cell[1]}\n")
    w(f"edges {len(graph.edges)}\n")
    for (a, b) in sorted(graph.edges):
        w(f"{a} {b} {graph.edges[(a, b)]!r}\n")
    w("end\n")
    return out.getvalue()


def load_house(text: str) -> tuple[HouseLayout, NavGraph]:
    lines = iter(text.splitlines())

    def header(name):
        parts = next(lines).split()
        if not parts or parts[0] != name:
            raise ValueError(f"expected section {name!r}, got {parts[:1]}")
        return parts[1:]

    first = next(lines).strip()
    if first != HOUSE_FORMAT:
        raise ValueError(f"unsupported house format {first!r} (want {HOUSE_FORMAT!r})")
    width, height, cs = header("size")
    width, height, cs = int(width), int(height), float(cs)
    (n,) = header("cells")
    cells = np.array([[_parse_cell(t) for t in next(lines).split()] for _ in range(int(n))], dtype=np.int64)
    (n,) = header("rooms")
    rooms = []
    for _ in range(int(n)):
        p = next(lines).split()
        rooms.append(Room(int(p[0]), RoomType.from_label(p[1]), tuple(int(v) for v in p[2:6]),
                          (float(p[6]), float(p[7]))))
    (n,) = header("doors")
    doors = []
    for _ in range(int(n)):
        a0, a1, b0, b1 = (int(v) for v in next(lines).split())
        doors.append(((a0, a1), (b0, b1)))
    (n,) = header("nodes")
    nodes = {}
    for _ in range(int(n)):
        p = next(lines).split()
        nodes[int(p[0])] = Viewpoint(int(p[1]), (float(p[2]), float(p[3])), (int(p[4]), int(p[5])))
    (n,) = header("edges")
    edges = {}
    for _ in range(int(n)):
        a, b, length = next(lines).split()
        edges[(int(a), int(b))] = float(length)
    if next(lines).strip() != "end":
        raise ValueError("missing end marker")
    house = HouseLayout(width, height, cs, cells, tuple(rooms), tuple(doors))
    return house, NavGraph(nodes, edges)
