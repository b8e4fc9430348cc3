import math
import time

import numpy as np
import pytest

from winnav import nn
from winnav.agent import LocalitySource
from winnav.core import NavGraph, Viewpoint, geodesic_distance
from winnav.evaluation import evaluate, uniform_random_success
from winnav.training import (
    TERMINAL_BONUS, TrainConfig, TrainLog, Trajectory, a2c_loss, build_agent, discounted_returns, il_loss,
    rollout, step_reward, teacher_action, train_agent,
)
from winnav.worldgen import Episode, LayoutPrior, build_dataset

from test_core import floyd_warshall


def synthetic_traj(probs, teacher, goal=None, goal_cells=None):
    T = len(probs)
    B = probs[0].shape[0]
    return Trajectory([nn.Tensor(p) for p in probs], [nn.Tensor(np.zeros((B, 1)))] * T,
                      [None if goal is None else nn.Tensor(g) for g in (goal or [None] * T)],
                      np.array(teacher), np.array(teacher), np.ones((T, B), bool), np.zeros((T, B)),
                      np.zeros(B, np.int64) if goal_cells is None else goal_cells, [], np.ones(B, bool))


# ---------------------------------------------------------------- teacher

def test_teacher_at_goal_stops(small_ds):
    ep = small_ds.episodes["train"][0]
    assert teacher_action(ep, small_ds.houses[ep.house_id][1], ep.goal) is None


def test_teacher_follows_path(small_ds):
    for ep in small_ds.episodes["train"][:30]:
        graph = small_ds.houses[ep.house_id][1]
        for a, b in zip(ep.path, ep.path[1:]):
            assert teacher_action(ep, graph, a) == b


def test_teacher_off_path_is_optimal(small_ds):
    for ep in small_ds.episodes["train"][:40]:
        graph = small_ds.houses[ep.house_id][1]
        ids, D = floyd_warshall(graph)
        ix = {v: i for i, v in enumerate(ids)}
        g = ix[ep.goal]
        for v in graph.nodes:
            hop = teacher_action(ep, graph, v)
            if v == ep.goal:
                assert hop is None
                continue
            assert D[ix[v], ix[hop]] + D[ix[hop], g] == pytest.approx(D[ix[v], g], abs=1e-9)
            assert hop in graph.neighbors(v)


def test_teacher_unreachable_goal_errors():
    nodes = {i: Viewpoint(i, (float(i), 0.0), (0, i)) for i in range(4)}
    graph = NavGraph(nodes, {(0, 1): 1.0, (2, 3): 1.0})
    ep = Episode(0, 0, 0, (0, 3), ())
    with pytest.raises(ValueError, match="unreachable"):
        teacher_action(ep, graph, 0)


# ---------------------------------------------------------------- rewards

def test_step_reward_cases():
    assert step_reward(3.0, 2.0, False, False) == 1.0
    assert step_reward(0.0, 0.0, True, True) == TERMINAL_BONUS == 2.0
    assert step_reward(1.0, 1.0, True, False) == -2.0


def test_shaped_return_along_shortest_path_telescopes(small_ds):
    ag = build_agent(3, False, 0, d=8, hidden=8)
    eps = small_ds.episodes["val_unseen"][:16]
    traj = rollout(ag, eps, small_ds.houses, None, "teacher")
    total = (traj.rewards * traj.active).sum(axis=0)
    for b, ep in enumerate(eps):
        d0 = geodesic_distance(small_ds.houses[ep.house_id][1], ep.start, ep.goal)
        assert total[b] == pytest.approx(d0 + 2.0, abs=1e-12)


def test_telescoping_for_any_trajectory(small_ds):
    ag = build_agent(3, False, 1, d=8, hidden=8)
    eps = small_ds.episodes["train"][:16]
    traj = rollout(ag, eps, small_ds.houses, None, "sample", np.random.default_rng(4))
    for b, ep in enumerate(eps):
        graph = small_ds.houses[ep.house_id][1]
        end = traj.paths[b][-1]
        shaping = traj.rewards[:, b][traj.active[:, b]].sum()
        bonus = TERMINAL_BONUS if geodesic_distance(graph, end, ep.goal) <= 3.0 else -TERMINAL_BONUS
        want = geodesic_distance(graph, ep.start, ep.goal) - geodesic_distance(graph, end, ep.goal) + bonus
        assert shaping == pytest.approx(want, abs=1e-12)
        assert traj.active[:, b].sum() <= 15


def test_discounted_returns_manual():
    r = np.array([[1.0], [0.0], [2.0]])
    m = np.ones((3, 1), bool)
    np.testing.assert_allclose(discounted_returns(r, m, 0.5)[:, 0], [1.5, 1.0, 2.0])
    m[2] = False
    np.testing.assert_allclose(discounted_returns(r, m, 0.5)[:, 0], [1.0, 0.0, 0.0])


# ------------------------------------------------------------------ losses

def test_il_perfect_policy_is_zero():
    probs = [np.array([[0.0, 1.0, 0.0]]), np.array([[1.0, 0.0]])]
    goal = [np.array([[0.0, 1.0]]), np.array([[0.0, 1.0]])]
    traj = synthetic_traj(probs, [[1], [0]], goal, np.array([1]))
    assert float(il_loss(traj, 1.0).data) == 0.0


def test_il_uniform_policy_is_T_log_k():
    T, k = 4, 5
    traj = synthetic_traj([np.full((2, k), 1.0 / k)] * T, [[1, 3]] * T)
    assert float(il_loss(traj).data) == pytest.approx(T * math.log(k), rel=1e-12)


def test_il_invariant_to_candidate_order(rng):
    p = rng.dirichlet(np.ones(4), size=3)
    t = np.array([0, 2, 3])
    perm = np.array([2, 0, 3, 1])
    inv = np.argsort(perm)
    a = il_loss(synthetic_traj([p], [t])).data
    b = il_loss(synthetic_traj([p[:, perm]], [inv[t]])).data
    assert float(a) == pytest.approx(float(b), rel=1e-14)


def _grad_vector(agent, loss):
    agent.zero_grad()
    loss.backward()
    return np.concatenate([(np.zeros(p.data.size) if p.grad is None else p.grad.ravel()) for p in agent.params.values()])


def test_large_lambda_recovers_il_direction(small_ds):
    ag = build_agent(3, True, 2, d=8, hidden=8)
    eps = small_ds.episodes["train"][:4]
    src = lambda: LocalitySource("gt", 3, ag.config.s, seed=0)  # noqa: E731

    def traj():
        return rollout(ag, eps, small_ds.houses, src(), "sample", np.random.default_rng(0))

    g_il = _grad_vector(ag, il_loss(traj(), 0.1))
    g_big = _grad_vector(ag, a2c_loss(traj(), lambda_il=1e6, goal_weight=0.1)[0])
    g_small = _grad_vector(ag, a2c_loss(traj(), lambda_il=0.2, goal_weight=0.1)[0])
    cos = lambda a, b: a @ b / np.linalg.norm(a) / np.linalg.norm(b)  # noqa: E731
    assert cos(g_big, g_il) > 1 - 1e-9
    assert cos(g_small, g_il) < cos(g_big, g_il)


def test_zero_advantage_gives_no_policy_gradient(small_ds):
    ag = build_agent(3, False, 3, d=8, hidden=8)
    ag.params["val.w"].data[:] = 0.0
    tr = rollout(ag, small_ds.episodes["train"][:4], small_ds.houses, None, "sample", np.random.default_rng(1))
    tr.rewards[:] = 0.0  # returns 0 and values 0: every advantage vanishes
    g = _grad_vector(ag, a2c_loss(tr, lambda_il=0.0)[0])
    assert np.abs(g).max() == 0.0


def test_advantage_normalisation_keeps_signs(small_ds):
    ag = build_agent(3, False, 3, d=8, hidden=8)
    tr = rollout(ag, small_ds.episodes["train"][:6], small_ds.houses, None, "sample", np.random.default_rng(2))
    returns = discounted_returns(tr.rewards, tr.active)
    vals = np.stack([v.data[:, 0] for v in tr.values])
    raw = np.where(tr.active, returns - vals, 0.0)
    a = raw[tr.active]
    normed = a / (a.std() + 1e-8)
    np.testing.assert_array_equal(np.sign(normed), np.sign(a))
    a2c_loss(tr, normalize_adv=True)  # runs


def test_entropy_drops_when_overfitting_one_episode(small_ds):
    ag = build_agent(3, False, 4, d=16, hidden=16)
    ep = [small_ds.episodes["train"][1]]
    opt = nn.AdamW(ag.params, nn.AdamWConfig(lr=3e-3))

    def entropy():
        with nn.no_grad():
            tr = rollout(ag, ep, small_ds.houses, None, "teacher")
        return np.mean([-(p.data * np.log(p.data + 1e-300)).sum() for p in tr.probs])

    before = entropy()
    rng = np.random.default_rng(0)
    for step in range(500):
        ag.zero_grad()
        tr = rollout(ag, ep, small_ds.houses, None, "teacher" if step % 2 == 0 else "sample", rng)
        loss = il_loss(tr) if step % 2 == 0 else a2c_loss(tr)[0]
        loss.backward()
        opt.step()
    assert entropy() < 0.5 * before


# -------------------------------------------------------------------- loop

def test_training_is_deterministic(small_ds):
    def run():
        ag = build_agent(3, True, 7, d=8, hidden=8)
        log = train_agent(ag, small_ds.episodes["train"], small_ds.episodes["val_unseen"], small_ds.houses,
                          TrainConfig(steps=6, eval_interval=3, eval_episodes=8, seed=7, map_mode="gt"))
        return log.csv(), nn.to_bytes(ag.checkpoint())

    assert run() == run()


def test_win_predicted_mode_needs_predictor(small_ds):
    ag = build_agent(3, True, 0, d=8, hidden=8)
    with pytest.raises(ValueError, match="predictor"):
        train_agent(ag, small_ds.episodes["train"], [], small_ds.houses, TrainConfig(steps=1))


def test_log_csv_columns():
    log = TrainLog([(1, "il", 2.0, None, None, None), (2, "rl", 1.0, 0.5, 50.0, 40.0)])
    lines = log.csv().splitlines()
    assert lines[0] == "step,kind,il_loss,rl_loss,val_sr,val_spl"
    assert lines[1] == "1,il,2.000000,,," and lines[2].endswith("50.0000,40.0000")


def test_baseline_beats_chance_on_one_hop(small_ds):
    from winnav.worldgen import build_episodes
    one = build_episodes(small_ds.houses, small_ds.split, seed=11, train_per_house=6, min_hops=1, max_hops=1)
    ag = build_agent(3, False, 0, d=16, hidden=32)
    train_agent(ag, one["train"], one["val_unseen"], small_ds.houses,
                TrainConfig(steps=300, eval_interval=100, eval_episodes=32, seed=0))
    val = one["val_unseen"]
    sr = evaluate(ag, val, small_ds.houses, map_mode="gt").summary["SR"]
    chance = 100.0 * np.mean([uniform_random_success(e, small_ds.houses[e.house_id][1]) for e in val])
    assert sr > chance + 10.0


def test_small_config_trains_past_chance_quickly():
    """20 houses, 2000 updates: under two minutes and clearly above chance."""
    ds = build_dataset(LayoutPrior(), 20, seed=3)
    ag = build_agent(5, False, 0)
    t0 = time.time()
    log = train_agent(ag, ds.episodes["train"], ds.episodes["val_seen"], ds.houses,
                      TrainConfig(steps=2000, eval_interval=500, eval_episodes=32, seed=0))
    dt = time.time() - t0
    best = max(r[4] for r in log.rows if r[4] is not None)
    val = ds.episodes["val_seen"][:32]
    chance = 100.0 * np.mean([uniform_random_success(e, ds.houses[e.house_id][1]) for e in val])
    assert dt < 120, dt
    assert best > chance, (best, chance)
