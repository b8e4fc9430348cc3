import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from winnav.core import (
    CELL_SIZE, N_CATEGORIES, N_ROOM_TYPES, N_SECTORS, OUTSIDE, UNKNOWN, GeometryError, GlobalGrid,
    LocalityMap, NavGraph, Pose, RoomType, Viewpoint, direction_sector, dump_house, fuse_into_global,
    geodesic_distance, global_to_local, load_house, local_offsets, local_to_global, one_hot, shortest_path,
)


# --------------------------------------------------------------- helpers

def line_graph(n, w=1.0):
    nodes = {i: Viewpoint(i, (float(i), 0.0), (0, 2 * i)) for i in range(n)}
    return NavGraph(nodes, {(i, i + 1): w for i in range(n - 1)})


def random_graph(rng, n, extra=0.3, integer=True):
    nodes = {i: Viewpoint(i, (0.0, 0.0), (0, 0)) for i in range(n)}
    edges = {}
    for v in range(1, n):
        u = int(rng.integers(v))
        edges[(u, v)] = float(rng.integers(1, 10)) if integer else float(rng.uniform(0.5, 5))
    for a in range(n):
        for b in range(a + 1, n):
            if (a, b) not in edges and rng.random() < extra / n * 4:
                edges[(a, b)] = float(rng.integers(1, 10)) if integer else float(rng.uniform(0.5, 5))
    return NavGraph(nodes, edges)


def floyd_warshall(graph):
    ids = sorted(graph.nodes)
    ix = {v: i for i, v in enumerate(ids)}
    n = len(ids)
    D = np.full((n, n), np.inf)
    np.fill_diagonal(D, 0.0)
    for (a, b), w in graph.edges.items():
        D[ix[a], ix[b]] = D[ix[b], ix[a]] = min(D[ix[a], ix[b]], w)
    for k in range(n):
        D = np.minimum(D, D[:, k:k + 1] + D[k:k + 1, :])
    return ids, D


def dense_rotation_oracle(g, heading):
    """Rotate the whole agent-frame lattice by a 2x2 matrix, then round."""
    c = g // 2
    rows, cols = np.divmod(np.arange(g * g), g)
    local = np.stack([c - rows, cols - c]).astype(float)  # (forward, right)
    th = math.radians(heading * 45.0)
    # world (drow, dcol) of the unit forward and right vectors
    M = np.array([[-math.cos(th), math.sin(th)],
                  [math.sin(th), math.cos(th)]])
    world = M @ local
    return world[0], world[1]


# -------------------------------------------------------------- room types

def test_category_count_and_sentinels():
    assert N_CATEGORIES == 14
    assert N_ROOM_TYPES == 12
    assert RoomType.UNKNOWN == UNKNOWN and RoomType.OUTSIDE == OUTSIDE
    assert RoomType.from_label("living_room") is RoomType.LIVING_ROOM
    with pytest.raises(ValueError):
        RoomType.from_label("ballroom")


def test_generated_rooms_never_use_sentinels(houses):
    for house, _ in houses.values():
        assert all(int(r.type) < N_ROOM_TYPES for r in house.rooms)


# ---------------------------------------------------------------- geodesic

def test_geodesic_identity_and_line():
    g = line_graph(3)
    assert geodesic_distance(g, 1, 1) == 0.0
    assert geodesic_distance(g, 0, 2) == 2.0
    assert shortest_path(g, 0, 2) == [0, 1, 2]


def test_geodesic_unknown_node():
    with pytest.raises(KeyError):
        geodesic_distance(line_graph(3), 0, 7)


def test_geodesic_matches_floyd_warshall_on_50_graphs():
    rng = np.random.default_rng(11)
    for _ in range(50):
        n = int(rng.integers(2, 26))
        g = random_graph(rng, n)
        ids, D = floyd_warshall(g)
        for i, a in enumerate(ids):
            for j, b in enumerate(ids):
                assert geodesic_distance(g, a, b) == D[i, j]


@settings(max_examples=1000)
@given(st.integers(0, 2 ** 31 - 1))
def test_geodesic_symmetry_and_triangle(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, int(rng.integers(2, 12)), integer=False)
    a, b, c = (int(x) for x in rng.integers(0, len(g.nodes), 3))
    dab, dba = geodesic_distance(g, a, b), geodesic_distance(g, b, a)
    assert abs(dab - dba) < 1e-9
    assert dab <= geodesic_distance(g, a, c) + geodesic_distance(g, c, b) + 1e-9
    assert (dab == 0) == (a == b)


# --------------------------------------------------------------- transform

def test_local_to_global_identity_case():
    pose = Pose.at_cell(6, 4, heading=0)
    assert local_to_global(pose, (2, 2), 5) == (6, 4)


def test_east_heading_one_ahead_is_plus_x():
    pose = Pose.at_cell(6, 4, heading=2)
    assert local_to_global(pose, (1, 2), 5) == (6, 5)
    # and north: one ahead is one row up
    assert local_to_global(Pose.at_cell(6, 4, heading=0), (1, 2), 5) == (5, 4)


def test_dense_oracle_1000_pairs():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        g = int(rng.choice([3, 5, 7, 9]))
        h = int(rng.integers(N_SECTORS))
        pose = Pose.at_cell(int(rng.integers(0, 30)), int(rng.integers(0, 30)), h)
        r, c = (int(x) for x in rng.integers(0, g, 2))
        got = local_to_global(pose, (r, c), g)
        wr, wc = dense_rotation_oracle(g, h)
        ar, ac = pose.cell()
        er, ec = ar + wr[r * g + c], ac + wc[r * g + c]
        if h % 2 == 0:
            assert got == (round(er), round(ec))
        else:
            assert abs(got[0] - er) <= 1.0 and abs(got[1] - ec) <= 1.0


@pytest.mark.parametrize("g", [1, 3, 5, 9, 11])
@pytest.mark.parametrize("h", range(N_SECTORS))
def test_offsets_one_to_one(g, h):
    dr, dc = local_offsets(g, h)
    assert len(set(zip(dr.tolist(), dc.tolist()))) == g * g


@pytest.mark.parametrize("ratio", [1, 2])
@pytest.mark.parametrize("h", range(N_SECTORS))
def test_local_global_roundtrip_all_headings(h, ratio):
    s = CELL_SIZE * ratio
    pose = Pose.at_cell(10, 12, h)
    for r in range(7):
        for c in range(7):
            gc = local_to_global(pose, (r, c), 7, s)
            assert global_to_local(pose, gc, 7, s) == (r, c)


def test_local_to_global_out_of_bounds_flag():
    pose = Pose.at_cell(0, 0, 0)
    assert local_to_global(pose, (0, 0), 5, shape=(10, 10)) is None
    with pytest.raises(GeometryError):
        local_to_global(pose, (5, 0), 5)


def test_even_grid_rejected():
    with pytest.raises(GeometryError):
        local_offsets(4, 0)


def test_map_cell_must_be_multiple_of_house_cell():
    with pytest.raises(GeometryError):
        local_to_global(Pose.at_cell(3, 3, 0), (1, 1), 3, s=0.75)


def test_direction_sector_cardinals():
    assert direction_sector(0, -1) == 0
    assert direction_sector(1, 0) == 2
    assert direction_sector(0, 1) == 4
    assert direction_sector(-1, -1) == 7


def test_pose_validation_and_rotation():
    with pytest.raises(GeometryError):
        Pose((0.0, 0.0), 8)
    p = Pose.at_cell(2, 3, 1)
    assert p.cell() == (2, 3)
    assert p.rotated(1).heading == 3


# -------------------------------------------------------------------- maps

def test_locality_map_validation_and_normalization():
    with pytest.raises(GeometryError):
        LocalityMap(np.zeros((4, 4, N_CATEGORIES)))
    m = LocalityMap.unknown(5)
    assert np.allclose(m.probs.sum(-1), 1.0, atol=1e-9)
    assert (m.argmax() == UNKNOWN).all()


def test_fuse_into_empty_grid_is_verbatim():
    rng = np.random.default_rng(0)
    p = rng.dirichlet(np.ones(N_CATEGORIES), size=(3, 3))
    grid = GlobalGrid.empty(10)
    pose = Pose.at_cell(5, 5, 2)
    out = fuse_into_global(grid, LocalityMap(p), pose)
    for r in range(3):
        for c in range(3):
            i, j = local_to_global(pose, (r, c), 3)
            assert np.allclose(out.probs[i, j], p[r, c], atol=1e-12)
    assert grid.weight.sum() == 0  # input untouched
    assert (out.confidence[out.weight == 0] == 0).all()


def test_fuse_same_map_twice_raises_confidence_only():
    rng = np.random.default_rng(1)
    m = LocalityMap(rng.dirichlet(np.ones(N_CATEGORIES), size=(5, 5)))
    pose = Pose.at_cell(6, 6, 3)
    g1 = fuse_into_global(GlobalGrid.empty(14), m, pose)
    g2 = fuse_into_global(g1, m, pose)
    seen = g1.weight > 0
    assert np.allclose(g1.probs, g2.probs, atol=1e-12)
    assert (g2.confidence[seen] > g1.confidence[seen]).all()
    assert (g2.confidence <= 1.0).all()


def test_conflicting_overlap_weighted_average():
    a = LocalityMap.from_labels(np.full((3, 3), int(RoomType.KITCHEN)))
    b = LocalityMap.from_labels(np.full((3, 3), int(RoomType.BEDROOM)))
    pose = Pose.at_cell(4, 4, 0)
    g = fuse_into_global(GlobalGrid.empty(9), a, pose, np.full(9, 0.6))
    g = fuse_into_global(g, b, pose, np.full(9, 0.2))
    cell = g.probs[4, 4]
    assert cell[RoomType.KITCHEN] == pytest.approx(0.6 / 0.8, abs=1e-12)
    assert cell[RoomType.BEDROOM] == pytest.approx(0.2 / 0.8, abs=1e-12)
    assert g.weight[4, 4] == pytest.approx(0.8)


@settings(max_examples=1000)
@given(st.integers(0, 2 ** 31 - 1))
def test_fusion_keeps_distributions_normalized(seed):
    rng = np.random.default_rng(seed)
    grid = GlobalGrid.empty(12)
    for _ in range(int(rng.integers(1, 4))):
        g = int(rng.choice([1, 3, 5]))
        m = LocalityMap(rng.dirichlet(np.ones(N_CATEGORIES), size=(g, g)))
        pose = Pose.at_cell(int(rng.integers(12)), int(rng.integers(12)), int(rng.integers(8)))
        grid = fuse_into_global(grid, m, pose, rng.random(g * g))
    assert np.allclose(grid.probs.sum(-1), 1.0, atol=1e-9)
    conf = grid.confidence
    assert (conf >= 0).all() and (conf < 1).all()


def test_one_hot_shape():
    oh = one_hot(np.array([[0, 13]]))
    assert oh.shape == (1, 2, N_CATEGORIES) and oh.sum() == 2


# ------------------------------------------------------------ serialization

def test_house_text_roundtrip_is_bit_exact(houses):
    for house, graph in houses.values():
        text = dump_house(house, graph)
        h2, g2 = load_house(text)
        assert h2.equals(house) and g2.equals(graph)
        assert dump_house(h2, g2) == text


def test_house_format_header_checked(houses):
    house, graph = houses[0]
    text = dump_house(house, graph).replace("WINHOUSE 1", "WINHOUSE 9")
    with pytest.raises(ValueError, match="unsupported house format"):
        load_house(text)
