"""Procedural houses, panoramic observations, episodes and templated
instructions, plus dataset splits and their on-disk formats.

Rooms are axis-aligned rectangles from a guillotine (BSP) partition of a
square canvas, separated by one-cell walls. Doors form a random spanning
tree over wall-sharing rooms (plus optional extra doors), and room types
are drawn along that tree as a reversible Markov chain whose pair
statistics on door edges match the prior's propensity matrix.
"""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import (
    CELL_SIZE, N_CATEGORIES, N_ROOM_TYPES, N_SECTORS, OUTSIDE_CELL, WALL, GeometryError,
    HouseLayout, NavGraph, Pose, Room, RoomType, Viewpoint, cell_center, direction_sector,
    orientation_encoding, shortest_path,
)

GENERATOR_VERSION = "winnav-worldgen/1"


class GenerationError(RuntimeError):
    pass


# ------------------------------------------------------------------ prior

def _sym(pairs: dict[tuple[RoomType, RoomType], float]) -> np.ndarray:
    m = np.zeros((N_CATEGORIES, N_CATEGORIES))
    for (a, b), v in pairs.items():
        m[a, b] = m[b, a] = v
    return m


T = RoomType
DEFAULT_PROPENSITY = _sym({
    (T.BATHROOM, T.BEDROOM): 6.0, (T.BATHROOM, T.HALLWAY): 3.0, (T.BATHROOM, T.KITCHEN): 2.0,
    (T.BATHROOM, T.LAUNDRY): 1.0,
    (T.BEDROOM, T.CLOSET): 5.0, (T.BEDROOM, T.HALLWAY): 4.0, (T.BEDROOM, T.OFFICE): 1.0,
    (T.BEDROOM, T.BEDROOM): 0.5,
    (T.KITCHEN, T.DINING_ROOM): 6.0, (T.KITCHEN, T.LIVING_ROOM): 3.0, (T.KITCHEN, T.LAUNDRY): 3.0,
    (T.KITCHEN, T.HALLWAY): 2.0, (T.KITCHEN, T.GARAGE): 1.5,
    (T.LIVING_ROOM, T.DINING_ROOM): 4.0, (T.LIVING_ROOM, T.ENTRYWAY): 4.0,
    (T.LIVING_ROOM, T.HALLWAY): 3.0, (T.LIVING_ROOM, T.OFFICE): 2.0, (T.LIVING_ROOM, T.STAIRS): 2.0,
    (T.HALLWAY, T.OFFICE): 3.0, (T.HALLWAY, T.CLOSET): 2.0, (T.HALLWAY, T.STAIRS): 3.0,
    (T.HALLWAY, T.LAUNDRY): 2.0, (T.HALLWAY, T.ENTRYWAY): 2.0, (T.HALLWAY, T.HALLWAY): 1.0,
    (T.GARAGE, T.ENTRYWAY): 3.0, (T.GARAGE, T.LAUNDRY): 3.0,
    (T.ENTRYWAY, T.STAIRS): 3.0, (T.ENTRYWAY, T.CLOSET): 2.0,
})
del T


@dataclass(frozen=True, eq=False)
class LayoutPrior:
    adjacency_propensity: np.ndarray = field(default_factory=lambda: DEFAULT_PROPENSITY.copy())
    room_count_range: tuple[int, int] = (6, 30)
    room_size_range: tuple[int, int] = (3, 5)  # interior cells per side
    door_probability: float = 0.15  # extra door on a wall-sharing, non-tree pair
    canvas: int = 18  # square canvas side in cells, outer wall included
    split_probability: float = 0.6

    def validate(self) -> None:
        m = np.asarray(self.adjacency_propensity, dtype=float)
        if m.shape != (N_CATEGORIES, N_CATEGORIES):
            raise ValueError(f"propensity must be {N_CATEGORIES}x{N_CATEGORIES}, got {m.shape}")
        if not np.array_equal(m, m.T):
            raise ValueError("propensity matrix must be symmetric")
        if (m < 0).any():
            raise ValueError("propensity entries must be non-negative")
        if m[N_ROOM_TYPES:].any():
            raise ValueError("sentinel categories cannot carry propensity")
        if not (m[:N_ROOM_TYPES, :N_ROOM_TYPES] > 0).any():
            raise ValueError("propensity matrix has no positive entry")
        lo, hi = self.room_size_range
        if lo < 1 or hi < lo:
            raise ValueError(f"bad room_size_range {self.room_size_range}")
        if self.room_count_range[0] < 1 or self.room_count_range[1] < self.room_count_range[0]:
            raise ValueError(f"bad room_count_range {self.room_count_range}")
        if not 0.0 <= self.door_probability <= 1.0:
            raise ValueError("door_probability must be in [0, 1]")
        if self.canvas < lo + 2:
            raise ValueError("canvas too small for the minimum room size")

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.adjacency_propensity, dtype="<f8").tobytes())
        h.update(repr((self.room_count_range, self.room_size_range, self.door_probability,
                       self.canvas, self.split_probability)).encode())
        return h.hexdigest()[:16]


# -------------------------------------------------------------- generation

def _fits(n, lo, hi):
    return lo <= n <= hi or n >= 2 * lo + 1


def _bsp(rect, lo, hi, p_split, rng, out):
    r0, c0, h, w = rect
    can_v = w >= 2 * lo + 1
    can_h = h >= 2 * lo + 1
    must = w > hi or h > hi
    if not (can_v or can_h):
        if must:
            raise GenerationError("room_size_range: leaf cannot be split to fit the maximum size")
        out.append(rect)
        return
    if not must and rng.random() >= p_split:
        out.append(rect)
        return
    if can_v and can_h:
        if w > hi and h <= hi:
            vertical = True
        elif h > hi and w <= hi:
            vertical = False
        else:
            vertical = bool(rng.random() < w / (w + h))
    else:
        vertical = can_v
    side = w if vertical else h
    # both parts must either fit or stay splittable
    ok = [a for a in range(lo, side - lo) if _fits(a, lo, hi) and _fits(side - a - 1, lo, hi)]
    if not ok:
        raise GenerationError("room_size_range: leaf cannot be split to fit the maximum size")
    a = ok[int(rng.integers(len(ok)))]
    if vertical:
        # left width a; wall at column c0 + a
        _bsp((r0, c0, h, a), lo, hi, p_split, rng, out)
        _bsp((r0, c0 + a + 1, h, w - a - 1), lo, hi, p_split, rng, out)
    else:
        _bsp((r0, c0, a, w), lo, hi, p_split, rng, out)
        _bsp((r0 + a + 1, c0, h - a - 1, w), lo, hi, p_split, rng, out)


def _shared_walls(rects):
    """Door slots for every pair of rooms separated by a single wall line."""
    slots = {}
    for i, (ar, ac, ah, aw) in enumerate(rects):
        for j, (br, bc, bh, bw) in enumerate(rects):
            if j <= i:
                continue
            cand = []
            if ac + aw + 1 == bc or bc + bw + 1 == ac:  # side by side
                lo, hi = max(ar, br), min(ar + ah, br + bh) - 1
                left, right = (i, j) if ac < bc else (j, i)
                lr = rects[left]
                col = lr[1] + lr[3]  # wall column
                for r in range(lo, hi + 1):
                    cand.append(((r, col - 1), (r, col + 1), left))
            elif ar + ah + 1 == br or br + bh + 1 == ar:  # stacked
                lo, hi = max(ac, bc), min(ac + aw, bc + bw) - 1
                top = i if ar < br else j
                tr = rects[top]
                row = tr[0] + tr[2]
                for c in range(lo, hi + 1):
                    cand.append(((row - 1, c), (row + 1, c), top))
            if cand:
                slots[(i, j)] = cand
    return slots


def _spanning_tree(n, pairs, rng):
    order = rng.permutation(len(pairs))
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    tree = []
    for k in order:
        a, b = pairs[k]
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            tree.append((a, b))
    return tree


def _sample_types(n, tree_edges, prop, rng):
    """Reversible Markov chain over the door tree: stationary root, then
    each child drawn from its parent's propensity row."""
    adj = {i: [] for i in range(n)}
    for a, b in tree_edges:
        adj[a].append(b)
        adj[b].append(a)
    rows = prop[:N_ROOM_TYPES, :N_ROOM_TYPES]
    rowsum = rows.sum(axis=1)
    types = [-1] * n
    root = int(rng.integers(n))
    types[root] = int(rng.choice(N_ROOM_TYPES, p=rowsum / rowsum.sum()))
    stack = [root]
    while stack:
        v = stack.pop()
        for u in sorted(adj[v]):
            if types[u] < 0:
                row = rows[types[v]]
                types[u] = int(rng.choice(N_ROOM_TYPES, p=row / row.sum()))
                stack.append(u)
    return types


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, (tuple, list)):
        return np.random.default_rng(np.random.SeedSequence([int(s) for s in seed]))
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def generate_house(prior: LayoutPrior, seed, max_retries: int = 200) -> tuple[HouseLayout, NavGraph]:
    """Generate a connected house and its one-viewpoint-per-room nav graph."""
    prior.validate()
    rng = _rng(seed)
    lo, hi = prior.room_size_range
    G = prior.canvas
    failure = "room_count_range"
    for _ in range(max_retries):
        rects: list = []
        try:
            _bsp((1, 1, G - 2, G - 2), lo, hi, prior.split_probability, rng, rects)
        except GenerationError as exc:
            failure = str(exc)
            continue
        n = len(rects)
        if not prior.room_count_range[0] <= n <= prior.room_count_range[1]:
            failure = f"room_count_range {prior.room_count_range} (drew {n} rooms)"
            continue
        slots = _shared_walls(rects)
        pairs = sorted(slots)
        tree = _spanning_tree(n, pairs, rng)
        if len(tree) != n - 1:
            failure = "connectivity: rooms do not form a connected wall graph"
            continue
        tree_set = set(tree)
        door_pairs = sorted(p for p in pairs if p in tree_set or rng.random() < prior.door_probability)
        return _assemble(rects, slots, door_pairs, tree, prior, rng)
    raise GenerationError(f"house generation failed after {max_retries} retries: {failure}")


def _assemble(rects, slots, door_pairs, tree, prior, rng):
    G = prior.canvas
    n = len(rects)
    types = _sample_types(n, tree, np.asarray(prior.adjacency_propensity, float), rng)
    cells = np.full((G, G), WALL, dtype=np.int64)
    rooms = []
    for rid, (r0, c0, h, w) in enumerate(rects):
        cells[r0:r0 + h, c0:c0 + w] = rid
        centroid = ((c0 + w / 2.0) * CELL_SIZE, (r0 + h / 2.0) * CELL_SIZE)
        rooms.append(Room(rid, RoomType(types[rid]), (r0, c0, r0 + h - 1, c0 + w - 1), centroid))
    doors = []
    for p in door_pairs:
        cand = slots[p]
        a, b, _ = cand[int(rng.integers(len(cand)))]
        doors.append((min(a, b), max(a, b)))
    doors.sort()
    house = HouseLayout(G, G, CELL_SIZE, cells, tuple(rooms), tuple(doors))
    return house, build_nav_graph(house)


def viewpoint_cell(room: Room) -> tuple[int, int]:
    r0, c0, r1, c1 = room.bbox
    return r0 + (r1 - r0) // 2, c0 + (c1 - c0) // 2


def build_nav_graph(house: HouseLayout) -> NavGraph:
    nodes = {}
    for rm in house.rooms:
        cell = viewpoint_cell(rm)
        nodes[rm.id] = Viewpoint(rm.id, cell_center(*cell, house.cell_size), cell)
    edges: dict[tuple[int, int], float] = {}
    for (a, b), (or_, oc) in zip(house.doors, house.opening_cells):
        ra, rb = int(house.cells[a]), int(house.cells[b])
        key = (min(ra, rb), max(ra, rb))
        ox, oy = cell_center(or_, oc, house.cell_size)
        pa, pb = nodes[key[0]].position, nodes[key[1]].position
        length = math.hypot(pa[0] - ox, pa[1] - oy) + math.hypot(pb[0] - ox, pb[1] - oy)
        edges[key] = min(length, edges.get(key, math.inf))
    return NavGraph(nodes, dict(sorted(edges.items())))


# ------------------------------------------------------------ observation

@dataclass(frozen=True, eq=False)
class PanoramicObservation:
    """Eight agent-relative sectors; sector 0 looks straight ahead."""
    here_type: int
    room_type: np.ndarray  # (8,) type of the room where each ray ends
    depth: np.ndarray  # (8,) units to the first wall
    door_visible: np.ndarray  # (8,) bool: ray passed a door opening
    door_depth: np.ndarray  # (8,) units to the opening, inf when none
    orientation: np.ndarray  # (8, 4) [cos th, sin th, cos phi, sin phi]

    def features(self) -> np.ndarray:
        """(8, C + 2) per-sector feature rows: type one-hot, depth, door flag."""
        f = np.zeros((N_SECTORS, N_CATEGORIES + 2))
        f[np.arange(N_SECTORS), self.room_type] = 1.0
        f[:, N_CATEGORIES] = self.depth
        f[:, N_CATEGORIES + 1] = self.door_visible
        return f


SECTOR_ORIENTATION = np.stack([orientation_encoding(k) for k in range(N_SECTORS)])
_DIAGONAL = np.array([k % 2 == 1 for k in range(N_SECTORS)])


def observe(house: HouseLayout, pose: Pose) -> PanoramicObservation:
    row, col = pose.cell(house.cell_size)
    rid = house.room_at(row, col)
    if rid < 0:
        raise GeometryError(f"pose at cell {(row, col)} is not inside a room")
    dirs = (pose.heading + np.arange(N_SECTORS)) % N_SECTORS
    steps, last_room, door_step = kernels.raycast(house.block_mask, house.opening_mask,
                                                  _room_ids(house), row, col, dirs)
    step_len = house.cell_size * np.where(_DIAGONAL[dirs], math.sqrt(2.0), 1.0)
    types = house.room_types_array[last_room]
    door_depth = np.where(door_step >= 0, door_step * step_len, np.inf)
    return PanoramicObservation(
        here_type=int(house.rooms[rid].type),
        room_type=types.astype(np.int64),
        depth=steps * step_len,
        door_visible=door_step >= 0,
        door_depth=door_depth,
        orientation=SECTOR_ORIENTATION,
    )


def _room_ids(house: HouseLayout) -> np.ndarray:
    ids = house.__dict__.get("_room_ids")
    if ids is None:
        ids = np.where(house.cells >= 0, house.cells, -1)
        house.__dict__["_room_ids"] = ids
    return ids


# ------------------------------------------------------------ instructions

RELATION_WORDS = ("enter", "exit", "pass", "turn_left", "turn_right", "go_straight", "stop_at")
SPECIAL_TOKENS = ("<pad>", "<eos>")
VOCAB = SPECIAL_TOKENS + RELATION_WORDS + tuple(RoomType(i).label for i in range(N_ROOM_TYPES))
TOKEN_ID = {t: i for i, t in enumerate(VOCAB)}
PAD_ID = TOKEN_ID["<pad>"]
EOS_ID = TOKEN_ID["<eos>"]


def turn_token(heading: int, move_sector: int) -> str:
    diff = (move_sector - heading) % N_SECTORS
    if diff == 0:
        return "go_straight"
    return "turn_right" if diff <= 4 else "turn_left"


def start_heading_for_seed(seed) -> int:
    return int(_rng([7919, *_seed_words(seed)]).integers(N_SECTORS))


def _seed_words(seed):
    if isinstance(seed, (tuple, list)):
        return [int(s) for s in seed]
    return [int(seed)]


def move_sectors(path, graph: NavGraph) -> list[int]:
    out = []
    for a, b in zip(path, path[1:]):
        pa, pb = graph.nodes[a].position, graph.nodes[b].position
        out.append(direction_sector(pb[0] - pa[0], pb[1] - pa[1]))
    return out


def render_instruction(path, house: HouseLayout, graph: NavGraph, seed=0,
                       start_heading: int | None = None) -> tuple[str, ...]:
    """Templated instruction: (exit A) then per hop (turn)(pass|enter X),
    closing with (stop_at goal). ``seed`` fixes the starting heading."""
    if len(path) < 2:
        raise ValueError("instruction needs a path of at least two viewpoints")
    heading = start_heading_for_seed(seed) if start_heading is None else start_heading
    label = [house.rooms[graph.nodes[v].room].type.label for v in path]
    tokens = ["exit", label[0]]
    for i, sector in enumerate(move_sectors(path, graph)):
        tokens.append(turn_token(heading, sector))
        last = i == len(path) - 2
        tokens += ["enter" if last else "pass", label[i + 1]]
        heading = sector
    tokens += ["stop_at", label[-1]]
    return tuple(tokens)


def encode_tokens(tokens) -> np.ndarray:
    try:
        return np.array([TOKEN_ID[t] for t in tokens], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"token {exc.args[0]!r} not in vocabulary") from None


# ---------------------------------------------------------------- episodes

@dataclass(frozen=True)
class Episode:
    episode_id: int
    house_id: int
    start_heading: int
    path: tuple[int, ...]
    instruction: tuple[str, ...]

    @property
    def start(self) -> int:
        return self.path[0]

    @property
    def goal(self) -> int:
        return self.path[-1]

    @property
    def hops(self) -> int:
        return len(self.path) - 1


def all_shortest_paths(graph: NavGraph) -> dict[tuple[int, int], list[int]]:
    cache = graph.__dict__.get("_sp_cache")
    if cache is None:
        cache = {}
        for a in graph.nodes:
            for b in graph.nodes:
                if a != b:
                    cache[(a, b)] = shortest_path(graph, a, b)
        graph.__dict__["_sp_cache"] = cache
    return cache


def qualifying_pairs(graph: NavGraph, min_hops: int, max_hops: int) -> list[tuple[int, int]]:
    paths = all_shortest_paths(graph)
    return sorted(p for p, path in paths.items() if min_hops <= len(path) - 1 <= max_hops)


def generate_episode(house: HouseLayout, graph: NavGraph, seed, min_hops: int = 1,
                     max_hops: int = 6, house_id: int = 0, episode_id: int = 0,
                     exclude: set | None = None) -> Episode:
    pairs = qualifying_pairs(graph, min_hops, max_hops)
    if exclude:
        pairs = [p for p in pairs if p not in exclude]
    if not pairs:
        raise GenerationError(f"no start/goal pair with {min_hops}..{max_hops} hops")
    rng = _rng(seed)
    start, goal = pairs[int(rng.integers(len(pairs)))]
    path = tuple(all_shortest_paths(graph)[(start, goal)])
    heading = int(rng.integers(N_SECTORS))
    tokens = render_instruction(path, house, graph, start_heading=heading)
    return Episode(episode_id, house_id, heading, path, tokens)


# ---------------------------------------------------------------- splits

@dataclass(frozen=True)
class Split:
    train: tuple[int, ...]
    val_seen: tuple[int, ...]
    val_unseen: tuple[int, ...]


def split_dataset(house_ids, ratios=(0.8, 0.1, 0.2), seed=0) -> Split:
    """Partition houses into train and unseen; seen-validation reuses train
    houses. ``ratios`` = (train houses, seen-val episode share, unseen houses);
    the two house shares must sum to 1."""
    train_r, _seen_r, unseen_r = ratios
    if abs(train_r + unseen_r - 1.0) > 1e-9:
        raise ValueError(f"train and unseen house shares must sum to 1, got {train_r} + {unseen_r}")
    ids = sorted(int(h) for h in house_ids)
    n_unseen = int(round(unseen_r * len(ids)))
    if len(ids) < 2 or n_unseen < 1 or n_unseen >= len(ids):
        raise ValueError(f"too few houses ({len(ids)}) for split {ratios}")
    perm = _rng([31, *_seed_words(seed)]).permutation(len(ids))
    unseen = tuple(sorted(ids[i] for i in perm[:n_unseen]))
    train = tuple(sorted(ids[i] for i in perm[n_unseen:]))
    return Split(train, train, unseen)


# ------------------------------------------------------------ persistence

EPISODE_FORMAT = "WINEPISODES 1"


def dump_episodes(episodes) -> str:
    out = io.StringIO()
    out.write(EPISODE_FORMAT + "\n")
    for ep in episodes:
        out.write(f"{ep.episode_id}\t{ep.house_id}\t{ep.start_heading}\t"
                  f"{','.join(map(str, ep.path))}\t{' '.join(ep.instruction)}\n")
    return out.getvalue()


def load_episodes(text: str) -> list[Episode]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != EPISODE_FORMAT:
        raise ValueError(f"unsupported episode format {lines[:1]}")
    eps = []
    for line in lines[1:]:
        if not line.strip():
            continue
        eid, hid, head, nodes, toks = line.split("\t")
        eps.append(Episode(int(eid), int(hid), int(head), tuple(int(v) for v in nodes.split(",")),
                           tuple(toks.split())))
    return eps


# ---------------------------------------------------------------- datasets

@dataclass
class Dataset:
    houses: dict  # house id -> (HouseLayout, NavGraph)
    split: Split
    episodes: dict  # split name -> list[Episode]


def build_houses(prior: LayoutPrior, n_houses: int, seed: int = 0) -> dict:
    return {h: generate_house(prior, [seed, 1, h]) for h in range(n_houses)}


def build_episodes(houses: dict, split: Split, seed: int = 0, train_per_house: int = 10,
                   seen_per_house: int = 1, unseen_per_house: int = 4, min_hops: int = 1,
                   max_hops: int = 5) -> dict:
    """Episodes for train / val_seen / val_unseen.

    Seen-validation episodes reuse train houses but never a (start, goal)
    pair used by a training episode of that house.
    """
    eps: dict = {"train": [], "val_seen": [], "val_unseen": []}
    eid = 0
    for h in split.train:
        house, graph = houses[h]
        used: set = set()
        for k in range(train_per_house):
            ep = generate_episode(house, graph, [seed, 2, h, k], min_hops, max_hops, h, eid)
            used.add((ep.start, ep.goal))
            eps["train"].append(ep)
            eid += 1
        for k in range(seen_per_house):
            try:
                ep = generate_episode(house, graph, [seed, 3, h, k], min_hops, max_hops, h, eid, exclude=used)
            except GenerationError:
                continue
            used.add((ep.start, ep.goal))
            eps["val_seen"].append(ep)
            eid += 1
    for h in split.val_unseen:
        house, graph = houses[h]
        for k in range(unseen_per_house):
            eps["val_unseen"].append(generate_episode(house, graph, [seed, 4, h, k], min_hops, max_hops, h, eid))
            eid += 1
    return eps


def build_dataset(prior: LayoutPrior, n_houses: int, seed: int = 0, train_per_house: int = 10,
                  seen_per_house: int = 1, unseen_per_house: int = 4, min_hops: int = 1,
                  max_hops: int = 5, ratios=(0.8, 0.1, 0.2)) -> Dataset:
    """Houses, a house-level split and episodes in one call."""
    houses = build_houses(prior, n_houses, seed)
    split = split_dataset(list(houses), ratios, seed)
    eps = build_episodes(houses, split, seed, train_per_house, seen_per_house, unseen_per_house,
                         min_hops, max_hops)
    return Dataset(houses, split, eps)
