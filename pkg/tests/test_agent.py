import numpy as np
import pytest

from winnav import nn
from winnav.agent import (
    CAND_FEAT, PANO_FEAT, PE_DIM, AgentConfig, LocalitySource, NavBatch, StepFeatures, WinAgent, baseline_from,
    cell_encoding, instruction_batch, pool_grid, upsample_index,
)
from winnav.core import N_CATEGORIES, UNKNOWN, GlobalGrid, Pose, one_hot
from winnav.kb import ground_truth_labels
from winnav.nn import grad_check
from winnav.training import il_loss, rollout
from winnav.worldgen import PAD_ID, encode_tokens

C = N_CATEGORIES


def make_agent(locality=True, g=3, d=8, hidden=8, seed=0, randomize=False):
    ag = WinAgent(AgentConfig(d=d, hidden=hidden, locality=locality, g=g, seed=seed))
    if randomize:
        r = np.random.default_rng(seed + 100)
        for p in ag.params.values():
            p.data[...] = r.normal(0, 0.3, p.shape)
    return ag


def feats_for(agent, ds, n=3, mode="gt"):
    eps = ds.episodes["train"][:n]
    src = LocalitySource(mode, agent.config.g, agent.config.s, seed=1) if agent.config.locality else None
    nav = NavBatch(eps, ds.houses, src, agent.config.g, agent.config.s)
    return eps, nav, nav.features()


# ------------------------------------------------------------ instruction

def test_padding_suffix_does_not_change_x0(small_ds):
    ag = make_agent(randomize=True)
    ids = instruction_batch(small_ds.episodes["train"][:2])
    longer = np.concatenate([ids, np.full((2, 5), PAD_ID)], axis=1)
    a, b = ag.encode_instruction(ids), ag.encode_instruction(longer)
    np.testing.assert_allclose(a.x0.data, b.x0.data, rtol=0, atol=1e-12)
    np.testing.assert_allclose(a.s0.data, b.s0.data, rtol=0, atol=1e-12)


def test_identical_instructions_identical_encodings(small_ds):
    ag = make_agent(randomize=True)
    ids = instruction_batch(small_ds.episodes["train"][:1])
    np.testing.assert_array_equal(ag.encode_instruction(ids).X.data, ag.encode_instruction(ids.copy()).X.data)


def test_unknown_token_errors():
    with pytest.raises(ValueError, match="vocabulary"):
        encode_tokens(["exit", "attic"])


def test_encoder_gradcheck(small_ds, rng):
    ag = make_agent(randomize=True)
    ids = instruction_batch(small_ds.episodes["train"][:2])
    w = rng.normal(size=(2, 8))
    names = ["tok_emb", "enc.Wq", "enc.Wk", "enc.Wv", "enc.Wo", "enc.Ws", "enc.bs"]
    rep = grad_check(lambda: nn.tsum(nn.mul(ag.encode_instruction(ids).s0, nn.Tensor(w))),
                     {k: ag.params[k] for k in names}, max_coords=12, rng=rng)
    assert rep.max_rel_error < 1e-6, str(rep)


# ---------------------------------------------------------------- history

def test_zero_history_token():
    ag = make_agent()
    for k in ("f_V", "f_V.b", "f_R", "f_T", "f_P"):
        ag.params[k].data[...] = 0.0
    H = ag.history_token(np.ones((2, PANO_FEAT)), np.ones((2, 4)), np.array([1, 2]), np.ones((2, PE_DIM)))
    assert H.shape == (2, 8)
    np.testing.assert_array_equal(H.data, 0.0)


def test_step_index_changes_history_token(rng):
    ag = make_agent(randomize=True)
    pano, R, pos = rng.normal(size=(1, PANO_FEAT)), rng.normal(size=(1, 4)), rng.normal(size=(1, PE_DIM))
    h1 = ag.history_token(pano, R, np.array([1]), pos).data
    h2 = ag.history_token(pano, R, np.array([2]), pos).data
    assert np.abs(h1 - h2).max() > 1e-6


# ---------------------------------------------------------- target tokens

def test_unobserved_grid_tokens_differ_only_by_position(small_ds):
    ag = make_agent(randomize=True)
    _, nav, f = feats_for(ag, small_ds, mode="gt")
    N = nav.N
    probs = np.zeros((1, N, C))
    probs[..., UNKNOWN] = 1.0
    x0 = ag.encode_instruction(instruction_batch(small_ds.episodes["train"][:1])).x0
    tok = ag.target_tokens(probs, np.zeros((1, N)), x0, nav.cell_code).data[0]
    assert tok.shape == (N, 8)
    pos = ag.position_encoding(nav.cell_code).data
    ratio = tok / pos
    np.testing.assert_allclose(ratio, np.broadcast_to(ratio[0], ratio.shape), rtol=1e-9)


def test_different_cells_give_different_tokens(small_ds):
    ag = make_agent(randomize=True)
    x0 = ag.encode_instruction(instruction_batch(small_ds.episodes["train"][:1])).x0
    code = np.repeat(cell_encoding(np.array([3.0]), np.array([4.0])), 2, axis=0)
    probs = one_hot(np.array([[1, 2]]))
    tok = ag.target_tokens(probs, np.ones((1, 2)), x0, code).data[0]
    assert np.abs(tok[0] - tok[1]).max() > 1e-6


def test_token_count_matches_pooled_grid(small_ds):
    ag = make_agent()
    _, nav, f = feats_for(ag, small_ds)
    H = max(h.height for h in nav.houses)
    k = nav.ratio
    assert f.grid_probs.shape[1] == nav.N == (-(-H // k)) ** 2 and f.cell_code.shape == (nav.N, PE_DIM)


def test_pool_grid_weighted_average():
    grid = GlobalGrid.empty(2, 2)
    grid.probs[0, 0] = one_hot(np.array(1))
    grid.probs[0, 1] = one_hot(np.array(2))
    grid.weight[0, 0], grid.weight[0, 1] = 3.0, 1.0
    probs, conf = pool_grid(grid, 2)
    assert probs.shape == (1, 1, C)
    assert probs[0, 0, 1] == pytest.approx(0.75) and probs[0, 0, 2] == pytest.approx(0.25)
    assert conf[0, 0] == pytest.approx(0.5)
    empty, c0 = pool_grid(GlobalGrid.empty(3, 3), 2)
    assert (empty[..., UNKNOWN] == 1).all() and (c0 == 0).all()


def test_upsample_index_centre_and_corners():
    gf, idx = upsample_index(5, 2)
    assert gf == 9
    grid = idx.reshape(9, 9)
    assert grid[4, 4] == 12 and grid[0, 0] == 0 and grid[8, 8] == 24
    assert grid[3, 4] == 7 and grid[2, 4] == 7  # ties go outward
    gf1, idx1 = upsample_index(5, 1)
    assert gf1 == 5 and (idx1 == np.arange(25)).all()


# ------------------------------------------------------------------ step

def test_step_distribution_support_and_sum(small_ds):
    ag = make_agent(randomize=True)
    eps, nav, f = feats_for(ag, small_ds)
    instr = ag.encode_instruction(instruction_batch(eps))
    out = ag.step(instr.s0, instr, f, [])
    p = out.probs.data
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    for b, ep in enumerate(eps):
        k = len(nav.graphs[b].neighbors(ep.start)) + 1
        assert (p[b, :k] > 0).all() and (p[b, k:] == 0).all()
        assert f.cand_nodes[b][1:] == nav.graphs[b].neighbors(ep.start)


def test_no_candidates_errors(small_ds):
    ag = make_agent()
    eps, nav, f = feats_for(ag, small_ds, n=1)
    f.cand_mask[:] = False
    instr = ag.encode_instruction(instruction_batch(eps))
    with pytest.raises(ValueError, match="no candidates"):
        ag.step(instr.s0, instr, f, [])


def test_identical_candidates_uniform(rng):
    ag = make_agent(randomize=True)
    cand = nn.Tensor(np.repeat(rng.normal(size=(1, 1, 8)), 3, axis=1))
    p = ag.action_probs(cand, nn.Tensor(rng.normal(size=(1, 8))), np.ones((1, 3), bool)).data
    np.testing.assert_allclose(p, 1 / 3, atol=1e-15)


def test_two_candidate_hand_computation(rng):
    ag = make_agent(randomize=True)
    W1, b1, w2 = (ag.params[k].data for k in ("act.W1", "act.b1", "act.w2"))
    cand = rng.normal(size=(1, 2, 8))
    c = rng.normal(size=(1, 8))
    logit = [float(np.maximum((cand[0, i] * c[0]) @ W1 + b1, 0) @ w2) for i in range(2)]
    p1 = 1.0 / (1.0 + np.exp(logit[0] - logit[1]))
    got = ag.action_probs(nn.Tensor(cand), nn.Tensor(c), np.ones((1, 2), bool)).data
    assert got[0, 1] == pytest.approx(p1, abs=1e-12)


def test_argmax_invariant_to_symmetric_scaling(rng):
    ag = make_agent(randomize=True)
    cand = nn.Tensor(rng.normal(size=(2, 4, 8)))
    c = rng.normal(size=(2, 8))
    m = np.ones((2, 4), bool)
    a = ag.action_probs(cand, nn.Tensor(c), m).data.argmax(1)
    # relu head is positively homogeneous once the bias is zero
    ag.params["act.b1"].data[:] = 0.0
    a0 = ag.action_probs(cand, nn.Tensor(c), m).data.argmax(1)
    a3 = ag.action_probs(cand, nn.Tensor(3.0 * c), m).data.argmax(1)
    np.testing.assert_array_equal(a0, a3)
    assert a.shape == (2,)


def test_full_step_gradcheck(small_ds, rng):
    ag = make_agent(randomize=True)
    eps, nav, f = feats_for(ag, small_ds, n=2)
    ids = instruction_batch(eps)

    def loss():
        instr = ag.encode_instruction(ids)
        out = ag.step(instr.s0, instr, f, [])
        return nn.add(nn.tsum(nn.cross_entropy(out.probs, np.array([1, 0]))),
                      nn.tsum(nn.cross_entropy(out.goal, np.array([0, 3]))))

    rep = grad_check(loss, dict(ag.params), max_coords=4, rng=rng)
    assert rep.max_rel_error < 1e-4, str(rep)


def test_il_loss_gradcheck_end_to_end(small_ds, rng):
    """Teacher-forced IL through encoder, history, target tokens and fusion."""
    ag = make_agent(randomize=True)
    eps = small_ds.episodes["train"][:2]

    def loss():
        src = LocalitySource("gt", 3, ag.config.s, seed=0)
        return il_loss(rollout(ag, eps, small_ds.houses, src, "teacher"), 1.0)

    rep = grad_check(loss, dict(ag.params), max_coords=3, rng=rng)
    assert rep.max_rel_error < 1e-4, str(rep)


# -------------------------------------------------------------- baseline

def test_baseline_has_fewer_params():
    assert make_agent(False).n_params() < make_agent(True).n_params()


@pytest.mark.parametrize("trained", [False, True])
def test_zeroed_locality_equals_baseline(small_ds, trained):
    win = make_agent(True, randomize=trained)
    if trained:
        win.params["tgt.Wo"].data[...] = 0.0
        win.params["nbr.W"].data[...] = 0.0
    base = baseline_from(win)
    eps = small_ds.episodes["val_unseen"][:6]
    tw = rollout(win, eps, small_ds.houses, LocalitySource("gt", 3, win.config.s), "greedy")
    tb = rollout(base, eps, small_ds.houses, None, "greedy")
    assert tw.paths == tb.paths
    for pw, pb in zip(tw.probs, tb.probs):
        np.testing.assert_array_equal(pw.data, pb.data)


def test_kind_tags_and_checkpoint_refusal():
    win, base = make_agent(True), make_agent(False)
    assert (win.kind, base.kind) == ("win", "baseline")
    ck = win.checkpoint(meta={**win.config_meta(), "max_len": 32})
    with pytest.raises(nn.CheckpointError, match="expected 'baseline'"):
        base.load_checkpoint(ck)
    back = WinAgent.from_checkpoint(nn.from_bytes(nn.to_bytes(ck)))
    assert back.kind == "win" and back.n_params() == win.n_params()


# -------------------------------------------------------------- map modes

def test_gt_mode_centre_is_agent_room(small_ds):
    eps = small_ds.episodes["train"][:4]
    src = LocalitySource("gt", 5, 1.0)
    houses = [small_ds.houses[e.house_id][0] for e in eps]
    graphs = [small_ds.houses[e.house_id][1] for e in eps]
    poses = [Pose.at_cell(*g.nodes[e.start].cell, e.start_heading) for e, g in zip(eps, graphs)]
    maps = src.maps(houses, poses, None, None)
    for b, (h, g, e) in enumerate(zip(houses, graphs, eps)):
        assert maps[b, 12].argmax() == h.rooms[g.nodes[e.start].room].type


def test_random_mode_reproducible():
    a = LocalitySource("random_type_random_dir", 5, seed=9).maps([None] * 3, [None] * 3, None, None)
    b = LocalitySource("random_type_random_dir", 5, seed=9).maps([None] * 3, [None] * 3, None, None)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (3, 25, C)


def test_random_dir_keeps_type_histogram(small_ds):
    src = LocalitySource("random_dir_gt_type", 5, 1.0, seed=2)
    for ep in small_ds.episodes["train"][:10]:
        house, graph = small_ds.houses[ep.house_id]
        for v in ep.path:
            pose = Pose.at_cell(*graph.nodes[v].cell, ep.start_heading)
            m = src.maps([house], [pose], None, None)[0].argmax(-1)
            gt = ground_truth_labels(house, pose, 5, 1.0).ravel()
            np.testing.assert_array_equal(np.bincount(m, minlength=C), np.bincount(gt, minlength=C))


def test_mode_validation():
    with pytest.raises(ValueError, match="unknown map mode"):
        LocalitySource("oracle", 5)
    with pytest.raises(ValueError, match="predictor"):
        LocalitySource("predicted", 5)
