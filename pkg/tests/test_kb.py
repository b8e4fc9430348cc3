import math
from itertools import combinations

import numpy as np
import pytest

from winnav.core import CELL_SIZE, WALL, HouseLayout, Pose, Room, RoomType
from winnav.kb import (
    AdjacencyMatrix, build_adjacency, classify_pair, descriptor, dump_kb, ground_truth_labels,
    ground_truth_locality_map, heatmap_csv, house_adjacency, load_kb, match_score, sample_viewpoints,
)
from winnav.worldgen import build_nav_graph

from test_worldgen import one_room_house, two_room_house

T = RoomType


def open_room(n=7, rt=T.LIVING_ROOM):
    cells = np.full((n + 2, n + 2), WALL, dtype=np.int64)
    cells[1:n + 1, 1:n + 1] = 0
    c = (n + 2) / 2 * CELL_SIZE
    return HouseLayout(n + 2, n + 2, CELL_SIZE, cells, (Room(0, rt, (1, 1, n, n), (c, c)),), ())


# ------------------------------------------------------------- viewpoints

def test_tiny_house_gives_one_candidate():
    house, _ = one_room_house()  # 3 x 3 interior = 1.5 units per side
    assert len(sample_viewpoints(house, 2.0)) == 1


def test_candidates_respect_separation(houses):
    for house, _ in houses.values():
        pts = [p.position for p in sample_viewpoints(house)]
        for a, b in combinations(pts, 2):
            assert math.dist(a, b) >= 2.0 - 1e-9


def test_every_room_gets_a_candidate():
    from winnav.worldgen import LayoutPrior, generate_house
    for s in range(100):
        house, _ = generate_house(LayoutPrior(), [55, s])
        rooms = {house.room_at(*p.cell()) for p in sample_viewpoints(house)}
        assert rooms == {r.id for r in house.rooms}


# ------------------------------------------------------------ relations

def test_identity_pair_is_same_room(houses):
    house, graph = houses[0]
    p = Pose.at_cell(*graph.nodes[0].cell)
    assert classify_pair(house, p, p) == "same_room"


def test_two_poses_in_one_room_match():
    house = open_room()
    p1, p2 = Pose.at_cell(4, 4), Pose.at_cell(4, 5)
    assert match_score(descriptor(house, p1), descriptor(house, p2)) >= 0.6
    assert classify_pair(house, p1, p2) == "same_room"


def test_wall_only_neighbours_are_occluded():
    house, _ = two_room_house(door=False)
    p1, p2 = Pose.at_cell(2, 3), Pose.at_cell(2, 5)
    assert classify_pair(house, p1, p2) == "neighboring_occluded"
    far1, far2 = Pose.at_cell(2, 1), Pose.at_cell(2, 7)
    assert classify_pair(house, far1, far2) == "unrelated"


def test_classify_pair_symmetric(houses):
    house, graph = houses[2]
    poses = sample_viewpoints(house)[:8]
    for a, b in combinations(poses, 2):
        assert classify_pair(house, a, b) == classify_pair(house, b, a)


def test_descriptor_deterministic_and_heading_free(houses):
    house, graph = houses[3]
    r, c = graph.nodes[1].cell
    d0 = descriptor(house, Pose.at_cell(r, c, 0))
    np.testing.assert_array_equal(d0, descriptor(house, Pose.at_cell(r, c, 0)))
    np.testing.assert_array_equal(np.sort(d0), np.sort(descriptor(house, Pose.at_cell(r, c, 4))))
    assert d0.sum() == 8


# ------------------------------------------------------------ adjacency

def test_single_two_room_house_counts():
    house, _ = two_room_house((T.BEDROOM, T.BATHROOM))
    kb = build_adjacency([house])
    assert kb.connectivity[T.BEDROOM, T.BATHROOM] == kb.navigability[T.BEDROOM, T.BATHROOM] == 1
    assert kb.connectivity.sum() == 2 and kb.navigability.sum() == 2
    closed, _ = two_room_house((T.BEDROOM, T.BATHROOM), door=False)
    kb2 = build_adjacency([closed])
    assert kb2.connectivity[T.BEDROOM, T.BATHROOM] == 1 and kb2.navigability.sum() == 0
    assert kb2.visibility.sum() == 0


def test_adjacency_invariants_over_100_houses():
    from winnav.worldgen import LayoutPrior, generate_house
    kb = build_adjacency(generate_house(LayoutPrior(), [8, s])[0] for s in range(100))
    for m in (kb.connectivity, kb.navigability, kb.visibility):
        np.testing.assert_array_equal(m, m.T)
        assert (m >= 0).all() and m.dtype.kind == "i"
    assert (kb.navigability <= kb.connectivity).all()
    assert kb.n_houses == 100
    # rooms are 3..5 cells a side at 0.5 units: mean area in [2.25, 6.25]
    sizes = kb.mean_room_size()[kb.room_count > 0]
    assert ((sizes >= 2.25) & (sizes <= 6.25)).all()


def test_merge_order_independent(houses):
    parts = [house_adjacency(h) for h, _ in houses.values()]
    fwd = sum(parts[1:], parts[0])
    rev = sum(parts[-2::-1], parts[-1])
    assert fwd.equals(rev)
    assert fwd.equals(build_adjacency(h for h, _ in houses.values()))


def test_empty_input_errors():
    with pytest.raises(ValueError):
        build_adjacency([])


def test_kb_text_roundtrip(houses):
    kb = build_adjacency(h for h, _ in houses.values())
    text = dump_kb(kb)
    assert load_kb(text).equals(kb)
    assert dump_kb(load_kb(text)) == text
    with pytest.raises(ValueError):
        load_kb("WINKB 9\n")
    rows = heatmap_csv(kb).splitlines()
    assert len(rows) == 15 and rows[0].startswith("type,bathroom,bedroom")


def test_majority_marginal_is_a_distribution(houses):
    kb = build_adjacency(h for h, _ in houses.values())
    assert kb.type_marginal().sum() == pytest.approx(1.0)
    assert kb.type_marginal()[kb.majority_type()] == kb.type_marginal().max()


# -------------------------------------------------------- ground truth

def test_g1_is_own_room(houses):
    house, graph = houses[0]
    for v in graph.nodes.values():
        lab = ground_truth_labels(house, Pose.at_cell(*v.cell, 3), 1)
        assert lab.shape == (1, 1) and lab[0, 0] == house.rooms[v.room].type


def test_hand_drawn_two_room_map():
    house, _ = two_room_house()
    got = ground_truth_labels(house, Pose.at_cell(2, 3, 2), 5)  # facing east, wall one cell ahead
    want = np.full((5, 5), int(T.BEDROOM))
    want[0] = int(T.KITCHEN)
    np.testing.assert_array_equal(got, want)
    # facing south: the outer wall row takes the nearer room, beyond it is outside
    south = ground_truth_labels(house, Pose.at_cell(2, 3, 4), 7)
    assert (south[0] == int(T.OUTSIDE)).all()
    np.testing.assert_array_equal(south[1], [T.KITCHEN, T.KITCHEN] + [T.BEDROOM] * 5)


def test_quarter_turn_equivariance(houses):
    for house, graph in houses.values():
        for v in graph.nodes.values():
            for h in (0, 2, 4, 6):
                a = ground_truth_labels(house, Pose.at_cell(*v.cell, h), 7)
                b = ground_truth_labels(house, Pose.at_cell(*v.cell, (h + 2) % 8), 7)
                np.testing.assert_array_equal(b, np.rot90(a, 1))


def test_centre_cell_is_room_type(houses):
    for house, graph in houses.values():
        for r, c in zip(*np.nonzero(house.cells >= 0)):
            for h in (0, 3):
                for s in (0.5, 1.0):
                    lab = ground_truth_labels(house, Pose.at_cell(int(r), int(c), h), 5, s)
                    assert lab[2, 2] == house.rooms[house.cells[r, c]].type


def test_locality_map_is_one_hot(houses):
    house, graph = houses[1]
    m = ground_truth_locality_map(house, Pose.at_cell(*graph.nodes[0].cell, 1), 5)
    np.testing.assert_array_equal(m.probs.sum(axis=-1), 1.0)
    assert set(np.unique(m.probs)) <= {0.0, 1.0}
