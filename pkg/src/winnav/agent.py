"""WIN policy and its no-locality baseline, plus the batched navigation
state that feeds them (observations, candidates, global grid fusion).

One fusion step, for a batch of episodes:

    H_t   = f_V(pano) + f_R(R_t) + f_T(t) + f_P(l_t)
    q     = s_{t-1} + H_t
    ctx   = attn(q, [instruction; candidates; history])
    ctx_T = attn_T(q, target tokens)                  (WIN only)
    c_t   = tanh(W_o [q; ctx] + W_oT ctx_T)
    p_t   = softmax_i f_A(cand_i ⊙ c_t)

Candidates in WIN also carry a neighbourhood encoding: the fused global
grid pooled over the wedge of cells that lie in the candidate's direction
within the locality radius g*s/2. The baseline is the same network with
both locality inputs removed, so zeroing W_oT and W_n in a WIN agent gives
exactly the baseline's distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels, nn
from .core import (
    CELL_SIZE, MAP_CELL_SIZE, N_CATEGORIES, N_SECTORS, UNKNOWN, GlobalGrid, HouseLayout, NavGraph, Pose,
    _cell_ratio, direction_sector, local_offsets, one_hot, orientation_encoding,
)
from .kb import ground_truth_labels
from .predictor import START_ACTION, LocalityPredictor, project_labels, relative_action
from .worldgen import EOS_ID, PAD_ID, VOCAB, Episode, encode_tokens, observe

MAP_MODES = ("random_type_random_dir", "random_dir_gt_type", "predicted", "gt")
SECTOR_FEAT = N_CATEGORIES + 2
CAND_FEAT = SECTOR_FEAT + 4
PANO_FEAT = N_SECTORS * SECTOR_FEAT
PE_DIM = 16
MAX_STEPS = 15


def sinusoid(values: np.ndarray, dim: int, base: float = 100.0) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    k = np.arange(dim // 2)
    ang = values[..., None] / base ** (2 * k / dim)
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


def cell_encoding(rows, cols) -> np.ndarray:
    """Parameter-free (row, col) code; a learned projection turns it into f_P."""
    return np.concatenate([sinusoid(rows, PE_DIM // 2, 20.0), sinusoid(cols, PE_DIM // 2, 20.0)], axis=-1)


@dataclass
class AgentConfig:
    d: int = 32
    hidden: int = 64  # action head
    locality: bool = True
    g: int = 5
    s: float = MAP_CELL_SIZE
    max_len: int = 32
    seed: int = 0


class InstructionEncoding:
    def __init__(self, X: nn.Tensor, mask: np.ndarray, x0: nn.Tensor, s0: nn.Tensor):
        self.X, self.mask, self.x0, self.s0 = X, mask, x0, s0


class WinAgent(nn.Module):
    def __init__(self, config: AgentConfig):
        super().__init__()
        self.config = cfg = config
        self.kind = "win" if cfg.locality else "baseline"
        d = cfg.d
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 77]))

        def w(name, *shape, scale=None):
            sc = 1.0 / math.sqrt(shape[0]) if scale is None else scale
            return self.add_param(name, rng.normal(0.0, sc, shape))

        def zeros(name, *shape):
            return self.add_param(name, np.zeros(shape))

        # instruction encoder
        w("tok_emb", len(VOCAB), d, scale=0.5)
        w("enc.Wq", d, d), w("enc.Wk", d, d), w("enc.Wv", d, d), w("enc.Wo", d, d, scale=0.5 / math.sqrt(d))
        w("enc.Ws", d, d), zeros("enc.bs", d)
        # history token encoders
        w("f_V", PANO_FEAT, d), zeros("f_V.b", d)
        w("f_R", 4, d, scale=0.5)
        w("f_T", MAX_STEPS + 2, d, scale=0.5)
        w("f_P", PE_DIM, d, scale=0.5)
        # candidates
        w("cand", CAND_FEAT, d), zeros("cand.b", d)
        w("stop", d, scale=0.5)
        # fusion
        w("att.Wq", d, d), w("att.Wk", d, d), w("att.Wv", d, d)
        w("att.Wo", 2 * d, d), zeros("att.bo", d)
        # action and value heads
        w("act.W1", d, cfg.hidden), zeros("act.b1", cfg.hidden), w("act.w2", cfg.hidden)
        w("val.w", d, scale=0.1), zeros("val.b", 1)
        if cfg.locality:
            w("loc.Wx", d, d), w("loc.Wm", N_CATEGORIES + 1, d), self.add_param("loc.bm", np.ones(d))
            w("tgt.Wq", d, d), w("tgt.Wk", d, d), w("tgt.Wv", d, d)
            # output projections of the locality pathway start at zero: an
            # untrained WIN agent computes exactly the baseline policy
            zeros("tgt.Wo", d, d)
            zeros("nbr.W", N_CATEGORIES + 1, d)
            w("goal.W", d, d)
        self.pe_tokens = sinusoid(np.arange(cfg.max_len), d)

    # ------------------------------------------------------------ pieces
    def encode_instruction(self, token_ids: np.ndarray) -> InstructionEncoding:
        """token_ids (B, L) padded with PAD_ID."""
        p = self.params
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
        B, L = ids.shape
        if L > self.config.max_len:
            raise ValueError(f"instruction longer than {self.config.max_len} tokens")
        mask = ids != PAD_ID
        d = self.config.d
        Z = nn.add(nn.embedding(p["tok_emb"], ids), nn.Tensor(np.broadcast_to(self.pe_tokens[:L], (B, L, d))))
        Q = nn.matmul(Z, p["enc.Wq"])
        K = nn.matmul(Z, p["enc.Wk"])
        V = nn.matmul(Z, p["enc.Wv"])
        S = nn.scale(nn.matmul(Q, nn.transpose(K, (0, 2, 1))), 1.0 / math.sqrt(d))
        A = nn.softmax(S, axis=-1, mask=mask[:, None, :])
        X = nn.add(Z, nn.matmul(nn.matmul(A, V), p["enc.Wo"]))
        wts = mask / mask.sum(axis=1, keepdims=True)
        x0 = nn.reshape(nn.matmul(nn.Tensor(wts[:, None, :]), X), (B, d))
        s0 = nn.tanh(nn.add(nn.matmul(x0, p["enc.Ws"]), p["enc.bs"]))
        return InstructionEncoding(X, mask, x0, s0)

    def position_encoding(self, code: np.ndarray) -> nn.Tensor:
        return nn.matmul(nn.Tensor(code), self.params["f_P"])

    def history_token(self, pano: np.ndarray, R: np.ndarray, step: np.ndarray, pos_code: np.ndarray) -> nn.Tensor:
        p = self.params
        v = nn.add(nn.matmul(nn.Tensor(pano), p["f_V"]), p["f_V.b"])
        r = nn.matmul(nn.Tensor(R), p["f_R"])
        t = nn.embedding(p["f_T"], np.minimum(step, MAX_STEPS + 1))
        return nn.add(nn.add(v, r), nn.add(t, self.position_encoding(pos_code)))

    def candidate_tokens(self, cand_feat: np.ndarray, cand_mask: np.ndarray,
                         nbhd: np.ndarray | None) -> nn.Tensor:
        """cand_feat (B, K, CAND_FEAT) with slot 0 reserved for STOP."""
        p = self.params
        B, K, _ = cand_feat.shape
        tok = nn.add(nn.matmul(nn.Tensor(cand_feat), p["cand"]), p["cand.b"])
        is_stop = np.zeros((B, K, 1))
        is_stop[:, 0] = 1.0
        stop = nn.mul(nn.expand(nn.expand(p["stop"], 0, K), 0, B), nn.Tensor(np.broadcast_to(is_stop, (B, K, self.config.d))))
        keep = nn.Tensor(np.broadcast_to(1.0 - is_stop, (B, K, self.config.d)))
        tok = nn.add(nn.mul(tok, keep), stop)
        if self.config.locality and nbhd is not None:
            tok = nn.add(tok, nn.matmul(nn.Tensor(nbhd), p["nbr.W"]))
        return tok

    def target_tokens(self, grid_probs: np.ndarray, grid_conf: np.ndarray, x0: nn.Tensor,
                      cell_code: np.ndarray) -> nn.Tensor:
        """c_i = f_P(cell_i) ⊙ (x0 W_x) ⊙ ([p_i; conf_i] W_m + b_m); returns (B, N, d)."""
        p = self.params
        B, N, _ = grid_probs.shape
        pos = nn.expand(self.position_encoding(cell_code), 0, B)  # (B, N, d)
        xi = nn.expand(nn.matmul(x0, p["loc.Wx"]), 1, N)
        fm = np.concatenate([grid_probs, grid_conf[..., None]], axis=-1)
        loc = nn.add(nn.matmul(nn.Tensor(fm), p["loc.Wm"]), p["loc.bm"])
        return nn.mul(nn.mul(pos, xi), loc)

    def _attend(self, q: nn.Tensor, tokens: nn.Tensor, mask: np.ndarray, prefix: str) -> nn.Tensor:
        p = self.params
        B, N, d = tokens.shape
        Q = nn.reshape(nn.matmul(q, p[f"{prefix}.Wq"]), (B, 1, d))
        K = nn.matmul(tokens, p[f"{prefix}.Wk"])
        V = nn.matmul(tokens, p[f"{prefix}.Wv"])
        S = nn.scale(nn.matmul(Q, nn.transpose(K, (0, 2, 1))), 1.0 / math.sqrt(d))
        A = nn.softmax(S, axis=-1, mask=mask[:, None, :])
        return nn.reshape(nn.matmul(A, V), (B, d))

    def fuse(self, s_prev: nn.Tensor, H: nn.Tensor, instr: InstructionEncoding, cand: nn.Tensor,
             cand_mask: np.ndarray, history: list[nn.Tensor], targets: nn.Tensor | None) -> nn.Tensor:
        p = self.params
        B = H.shape[0]
        q = nn.add(s_prev, H)
        hist = nn.concat([nn.reshape(h, (B, 1, self.config.d)) for h in history], axis=1)
        tokens = nn.concat([instr.X, cand, hist], axis=1)
        mask = np.concatenate([instr.mask, cand_mask, np.ones((B, len(history)), bool)], axis=1)
        ctx = self._attend(q, tokens, mask, "att")
        pre = nn.add(nn.matmul(nn.concat([q, ctx], axis=1), p["att.Wo"]), p["att.bo"])
        if targets is not None:
            ctx_t = self._attend(q, targets, np.ones(targets.shape[:2], bool), "tgt")
            pre = nn.add(pre, nn.matmul(ctx_t, p["tgt.Wo"]))
        return nn.tanh(pre)

    def action_probs(self, cand: nn.Tensor, c_t: nn.Tensor, cand_mask: np.ndarray) -> nn.Tensor:
        p = self.params
        B, K, d = cand.shape
        z = nn.mul(cand, nn.expand(c_t, 1, K))
        hdn = nn.relu(nn.add(nn.matmul(z, p["act.W1"]), p["act.b1"]))
        logits = nn.reshape(nn.matmul(hdn, nn.reshape(p["act.w2"], (-1, 1))), (B, K))
        return nn.softmax(logits, axis=-1, mask=cand_mask)

    def value(self, c_t: nn.Tensor) -> nn.Tensor:
        p = self.params
        return nn.add(nn.matmul(c_t, nn.reshape(p["val.w"], (-1, 1))), p["val.b"])

    def goal_probs(self, targets: nn.Tensor, c_t: nn.Tensor) -> nn.Tensor:
        B, N, d = targets.shape
        proj = nn.matmul(targets, self.params["goal.W"])
        s = nn.reshape(nn.matmul(proj, nn.reshape(c_t, (B, d, 1))), (B, N))
        return nn.softmax(s, axis=-1)

    # ------------------------------------------------------------- step
    def step(self, s_prev: nn.Tensor, instr: InstructionEncoding, feats: "StepFeatures",
             history: list[nn.Tensor]) -> "StepOutput":
        """One policy step. ``history`` is extended in place with H_t."""
        if feats.cand_mask.sum(axis=1).min() < 1:
            raise ValueError("win_step: an episode has no candidates")
        H = self.history_token(feats.pano, feats.R, feats.step, feats.pos_code)
        history.append(H)
        cand = self.candidate_tokens(feats.cand_feat, feats.cand_mask,
                                     feats.nbhd if self.config.locality else None)
        targets = None
        if self.config.locality:
            targets = self.target_tokens(feats.grid_probs, feats.grid_conf, instr.x0, feats.cell_code)
        c_t = self.fuse(s_prev, H, instr, cand, feats.cand_mask, history, targets)
        probs = self.action_probs(cand, c_t, feats.cand_mask)
        goal = self.goal_probs(targets, c_t) if targets is not None else None
        return StepOutput(c_t, probs, self.value(c_t), goal)

    @classmethod
    def from_checkpoint(cls, ck: nn.Checkpoint) -> "WinAgent":
        m = ck.meta
        cfg = AgentConfig(d=int(m["d"]), hidden=int(m["hidden"]), locality=ck.kind == "win",
                          g=int(m["g"]), s=float(m["s"]), max_len=int(m["max_len"]))
        agent = cls(cfg)
        agent.load_checkpoint(ck)
        return agent

    def config_meta(self) -> dict:
        c = self.config
        return {"d": c.d, "hidden": c.hidden, "g": c.g, "s": c.s, "max_len": c.max_len}


def baseline_from(win: WinAgent) -> WinAgent:
    """Baseline sharing every non-locality weight of ``win``."""
    cfg = AgentConfig(**{**win.config.__dict__, "locality": False})
    base = WinAgent(cfg)
    base.load_arrays({k: v for k, v in win.arrays().items() if k in base.params})
    return base


@dataclass
class StepOutput:
    state: nn.Tensor  # (B, d)
    probs: nn.Tensor  # (B, K)
    value: nn.Tensor  # (B, 1)
    goal: nn.Tensor | None  # (B, N)


@dataclass
class StepFeatures:
    pano: np.ndarray  # (B, PANO_FEAT)
    R: np.ndarray  # (B, 4)
    step: np.ndarray  # (B,)
    pos_code: np.ndarray  # (B, PE_DIM)
    cand_feat: np.ndarray  # (B, K, CAND_FEAT)
    cand_mask: np.ndarray  # (B, K)
    nbhd: np.ndarray  # (B, K, C + 1)
    grid_probs: np.ndarray  # (B, N, C)
    grid_conf: np.ndarray  # (B, N)
    cell_code: np.ndarray  # (N, PE_DIM)
    cand_nodes: list  # per episode: [None (STOP), neighbour ids...]


# ------------------------------------------------------ navigation state

def upsample_index(g: int, ratio: int) -> tuple[int, np.ndarray]:
    """Nearest-map-cell index for every cell of the house-resolution
    agent-frame grid of side ratio*(g-1)+1 (ties go away from the centre)."""
    gf = ratio * (g - 1) + 1
    c, cf = g // 2, gf // 2
    off = np.arange(gf) - cf
    near = c + np.sign(off) * np.floor(np.abs(off) / ratio + 0.5).astype(np.int64)
    rows, cols = np.meshgrid(near, near, indexing="ij")
    return gf, (rows * g + cols).ravel()


def pool_grid(grid: GlobalGrid, ratio: int) -> tuple[np.ndarray, np.ndarray]:
    """Weight-averaged ratio x ratio pooling of a global grid; unobserved
    blocks stay UNKNOWN with zero confidence."""
    if ratio == 1:
        return grid.probs, grid.confidence
    H, W = grid.shape
    h, w = -(-H // ratio), -(-W // ratio)
    P = np.zeros((h * ratio, w * ratio, N_CATEGORIES))
    Wt = np.zeros((h * ratio, w * ratio))
    P[:H, :W] = grid.probs * grid.weight[..., None]
    Wt[:H, :W] = grid.weight
    P = P.reshape(h, ratio, w, ratio, -1).sum(axis=(1, 3))
    Wt = Wt.reshape(h, ratio, w, ratio).sum(axis=(1, 3))
    seen = Wt > 0
    P[seen] /= Wt[seen, None]
    P[~seen, UNKNOWN] = 1.0
    return P, Wt / (ratio * ratio) / (1.0 + Wt / (ratio * ratio))


def wedge_offsets(g: int, s: float = CELL_SIZE, cell_size: float = CELL_SIZE):
    """Cells within the locality radius g*s/2 of the agent, by world sector."""
    radius = g * s / 2.0 / cell_size
    R = int(math.ceil(radius))
    dr, dc = np.meshgrid(np.arange(-R, R + 1), np.arange(-R, R + 1), indexing="ij")
    dr, dc = dr.ravel(), dc.ravel()
    keep = (dr * dr + dc * dc <= radius * radius + 1e-9) & ((dr != 0) | (dc != 0))
    dr, dc = dr[keep], dc[keep]
    wedge = np.array([direction_sector(float(c), float(r)) for r, c in zip(dr, dc)], dtype=np.int64)
    return dr, dc, wedge


class LocalitySource:
    """Produces the g x g map fused each step under one of the map modes."""

    def __init__(self, mode: str, g: int, s: float = CELL_SIZE, predictor: LocalityPredictor | None = None,
                 seed: int = 0):
        if mode not in MAP_MODES:
            raise ValueError(f"unknown map mode {mode!r}; choose from {MAP_MODES}")
        if mode == "predicted" and predictor is None:
            raise ValueError("predicted map mode needs a locality predictor checkpoint")
        if predictor is not None and predictor.g != g:
            raise ValueError(f"predictor grid {predictor.g} does not match agent grid {g}")
        self.mode, self.g, self.s, self.predictor = mode, g, s, predictor
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 4242]))
        self.state = None

    def reset(self, batch: int):
        if self.mode == "predicted":
            self.state = self.predictor.initial_state(batch)

    def maps(self, houses: list[HouseLayout], poses: list[Pose], obs_labels: np.ndarray,
             actions: np.ndarray) -> np.ndarray:
        """(B, g*g, C) distributions for the current poses."""
        B = len(poses)
        gg = self.g * self.g
        if self.mode == "predicted":
            with nn.no_grad():
                st = self.state.with_action(actions)
                probs, self.state = self.predictor.step(one_hot(obs_labels).reshape(B, -1), st)
            return probs.data
        if self.mode == "random_type_random_dir":
            return one_hot(self.rng.integers(N_CATEGORIES, size=(B, gg)))
        gt = np.stack([ground_truth_labels(h, p, self.g, self.s).ravel() for h, p in zip(houses, poses)])
        if self.mode == "random_dir_gt_type":
            gt = np.stack([row[self.rng.permutation(gg)] for row in gt])
        return one_hot(gt)


class NavBatch:
    """Step-synchronous state of a batch of episodes (possibly different houses)."""

    def __init__(self, episodes: list[Episode], houses: dict, source: LocalitySource | None,
                 g: int = 5, s: float = CELL_SIZE, max_steps: int = MAX_STEPS):
        self.episodes = episodes
        self.houses = [houses[ep.house_id][0] for ep in episodes]
        self.graphs = [houses[ep.house_id][1] for ep in episodes]
        self.source, self.g, self.s, self.max_steps = source, g, s, max_steps
        B = len(episodes)
        self.node = np.array([ep.start for ep in episodes], np.int64)
        self.heading = np.array([ep.start_heading for ep in episodes], np.int64)
        self.last_action = np.full(B, START_ACTION, np.int64)
        self.done = np.zeros(B, bool)
        self.t = 0
        self.paths = [[ep.start] for ep in episodes]
        # fusion runs at house-cell resolution (each map cell painted over the
        # house cells it covers); target tokens see the grid pooled to cell side s
        self.ratio = k = _cell_ratio(s, CELL_SIZE)
        self.grids = [GlobalGrid.empty(h.height, h.width) for h in self.houses]
        self.wedges = wedge_offsets(g, s, CELL_SIZE)
        self.fine_g, self.fine_idx = upsample_index(g, k)
        shapes = [(-(-h.height // k), -(-h.width // k)) for h in self.houses]
        Hs, Ws = max(a for a, _ in shapes), max(b for _, b in shapes)
        rr, cc = np.divmod(np.arange(Hs * Ws), Ws)
        self.grid_shape = (Hs, Ws)
        self.N = Hs * Ws
        # positions are encoded in house-cell units, shared with the agent position code
        self.cell_code = cell_encoding(rr * k + (k - 1) / 2, cc * k + (k - 1) / 2)
        if source is not None:
            source.reset(B)

    def pose(self, b: int) -> Pose:
        r, c = self.graphs[b].nodes[int(self.node[b])].cell
        return Pose.at_cell(r, c, int(self.heading[b]), self.houses[b].cell_size)

    def features(self) -> StepFeatures:
        B = len(self.episodes)
        C = N_CATEGORIES
        poses = [self.pose(b) for b in range(B)]
        obs = [observe(self.houses[b], poses[b]) for b in range(B)]
        pano = np.stack([o.features().ravel() for o in obs])
        R = np.stack([orientation_encoding(int(h)) for h in self.heading])
        cells = [p.cell(CELL_SIZE) for p in poses]
        pos_code = cell_encoding(np.array([c[0] for c in cells]), np.array([c[1] for c in cells]))
        cand_nodes = []
        K = 1 + max(len(self.graphs[b].neighbors(int(self.node[b]))) for b in range(B))
        cand_feat = np.zeros((B, K, CAND_FEAT))
        cand_mask = np.zeros((B, K), bool)
        cand_mask[:, 0] = True
        nbhd = np.zeros((B, K, C + 1))
        if self.source is not None:
            labels = np.stack([project_labels(o, self.g, self.s).ravel() for o in obs])
            maps = self.source.maps(self.houses, poses, labels, self.last_action)
            conf_w = maps.max(axis=-1)
            for b in range(B):
                if not self.done[b]:
                    grid = self.grids[b]
                    dr, dc = local_offsets(self.fine_g, poses[b].heading)
                    fi = self.fine_idx
                    kernels.fuse_into(grid.probs, grid.weight, maps[b][fi], cells[b][0], cells[b][1], dr, dc,
                                      conf_w[b][fi])
        for b in range(B):
            v = int(self.node[b])
            graph = self.graphs[b]
            nodes = [None]
            if not self.done[b]:
                feats = obs[b].features()
                pa = graph.nodes[v].position
                if self.source is not None:
                    grid = self.grids[b]
                    dr, dc, wedge = self.wedges
                    pooled, mconf = kernels.wedge_pool(grid.probs, grid.weight, cells[b][0], cells[b][1],
                                                       dr, dc, wedge, N_SECTORS)
                for k, n in enumerate(graph.neighbors(v), start=1):
                    pb = graph.nodes[n].position
                    sec = direction_sector(pb[0] - pa[0], pb[1] - pa[1])
                    rel = (sec - int(self.heading[b])) % N_SECTORS
                    cand_feat[b, k, :SECTOR_FEAT] = feats[rel]
                    cand_feat[b, k, SECTOR_FEAT:] = orientation_encoding(rel)
                    cand_mask[b, k] = True
                    if self.source is not None:
                        nbhd[b, k, :C] = pooled[sec]
                        nbhd[b, k, C] = mconf[sec]
                    nodes.append(n)
            cand_nodes.append(nodes)
        Hs, Ws = self.grid_shape
        grid_probs = np.zeros((B, Hs * Ws, C))
        grid_probs[..., UNKNOWN] = 1.0
        grid_conf = np.zeros((B, Hs * Ws))
        for b, grid in enumerate(self.grids):
            probs, conf = pool_grid(grid, self.ratio)
            h, w = conf.shape
            grid_probs.reshape(B, Hs, Ws, C)[b, :h, :w] = probs
            grid_conf.reshape(B, Hs, Ws)[b, :h, :w] = conf
        return StepFeatures(pano, R, np.full(B, self.t), pos_code, cand_feat, cand_mask, nbhd,
                            grid_probs, grid_conf, self.cell_code, cand_nodes)

    def goal_cells(self) -> np.ndarray:
        Ws = self.grid_shape[1]
        out = []
        for ep, graph in zip(self.episodes, self.graphs):
            r, c = graph.nodes[ep.goal].cell
            out.append((r // self.ratio) * Ws + c // self.ratio)
        return np.array(out, np.int64)

    def apply(self, choice: np.ndarray, cand_nodes: list) -> np.ndarray:
        """Move each active episode to its chosen candidate (0 = STOP); returns moved mask."""
        moved = np.zeros(len(self.episodes), bool)
        for b, k in enumerate(choice):
            if self.done[b]:
                continue
            if k == 0:
                self.done[b] = True
                continue
            n = cand_nodes[b][int(k)]
            graph = self.graphs[b]
            pa, pb = graph.nodes[int(self.node[b])].position, graph.nodes[n].position
            sec = direction_sector(pb[0] - pa[0], pb[1] - pa[1])
            self.last_action[b] = relative_action(int(self.heading[b]), sec)
            self.heading[b] = sec
            self.node[b] = n
            self.paths[b].append(n)
            moved[b] = True
        self.t += 1
        if self.t >= self.max_steps:
            self.done[:] = True
        return moved


def instruction_batch(episodes: list[Episode], max_len: int = 32) -> np.ndarray:
    L = max(len(ep.instruction) for ep in episodes) + 1
    if L > max_len:
        raise ValueError(f"instruction of {L} tokens exceeds max_len {max_len}")
    out = np.full((len(episodes), L), PAD_ID, np.int64)
    for b, ep in enumerate(episodes):
        ids = encode_tokens(ep.instruction)
        out[b, :len(ids)] = ids
        out[b, len(ids)] = EOS_ID
    return out
