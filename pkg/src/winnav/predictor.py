"""Locality predictor: egocentric projection of the panorama, a recurrent
decoder over successive maps, and per-cell room-type distributions.

    m_t = [flat M_{t-1}; flat M_t] W_M
    h_t = LSTM([m_t; a_{t-1}], h_{t-1})
    p_t = softmax_per_cell(h_t W_out + b_out)
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels, nn
from .core import (
    CELL_SIZE, MAP_CELL_SIZE, N_CATEGORIES, N_SECTORS, UNKNOWN, HouseLayout, LocalityMap, NavGraph, Pose, one_hot,
)
from .kb import AdjacencyMatrix, ground_truth_labels
from .worldgen import PanoramicObservation, all_shortest_paths, move_sectors, observe, qualifying_pairs

START_ACTION = N_SECTORS
STOP_ACTION = N_SECTORS + 1
N_ACTIONS = N_SECTORS + 2
ACTION_DIM = 16


def egocentric_project(obs: PanoramicObservation, g: int, s: float = CELL_SIZE) -> LocalityMap:
    return LocalityMap.from_labels(project_labels(obs, g, s), s)


def project_labels(obs: PanoramicObservation, g: int, s: float = CELL_SIZE) -> np.ndarray:
    """(g, g) labels: ray cells up to each sector's depth, unknown elsewhere."""
    return kernels.project(obs.here_type, obs.room_type, obs.depth, obs.door_depth, g, s, UNKNOWN)


def relative_action(prev_heading: int, move_sector: int) -> int:
    return (move_sector - prev_heading) % N_SECTORS


@dataclass
class PredictorConfig:
    g: int = 5
    s: float = MAP_CELL_SIZE
    map_dim: int = 64
    hidden: int = 64
    steps: int = 1500
    batch: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.0
    clip_norm: float = 5.0
    seed: int = 0
    eval_interval: int = 250
    patience: int = 4
    max_hops: int = 6
    val_fraction: float = 0.1


class LocalityPredictor(nn.Module):
    kind = "predictor"

    def __init__(self, g: int, s: float = CELL_SIZE, map_dim: int = 64, hidden: int = 64, seed: int = 0,
                 zero: bool = False):
        super().__init__()
        if g < 1 or g % 2 == 0:
            raise ValueError(f"grid size g must be odd, got {g}")
        self.g, self.s, self.map_dim, self.hidden = g, s, map_dim, hidden
        rng = np.random.default_rng(seed)
        n_map = g * g * N_CATEGORIES
        z = 0.0 if zero else 1.0
        self.W_M = self.add_param("W_M", z * rng.normal(0, 1.0 / np.sqrt(2 * g * g), (2 * n_map, map_dim)))
        self.A = self.add_param("action_emb", z * rng.normal(0, 0.1, (N_ACTIONS, ACTION_DIM)))
        lp = nn.lstm_params(map_dim + ACTION_DIM, hidden, rng, "dec", forget_bias=0.0 if zero else 1.0)
        self.W_lstm = self.add_param("dec.W", z * lp["dec.W"].data)
        self.b_lstm = self.add_param("dec.b", z * lp["dec.b"].data)
        self.W_out = self.add_param("W_out", z * rng.normal(0, 1.0 / np.sqrt(hidden), (hidden, n_map)))
        self.b_out = self.add_param("b_out", np.zeros(n_map))
        self.calls = 0

    def config_meta(self) -> dict:
        return {"g": self.g, "s": self.s, "map_dim": self.map_dim, "hidden": self.hidden}

    @classmethod
    def from_checkpoint(cls, ck: nn.Checkpoint) -> "LocalityPredictor":
        m = ck.meta
        model = cls(int(m["g"]), float(m["s"]), int(m["map_dim"]), int(m["hidden"]), zero=True)
        model.load_checkpoint(ck)
        return model

    # --- pieces
    def initial_state(self, batch: int) -> "PredictorState":
        gg = self.g * self.g
        prev = np.zeros((batch, gg * N_CATEGORIES))
        prev.reshape(batch, gg, N_CATEGORIES)[:, :, UNKNOWN] = 1.0
        z = np.zeros((batch, self.hidden))
        return PredictorState(nn.Tensor(z), nn.Tensor(z.copy()), prev, np.full(batch, START_ACTION))

    def map_feature(self, M_prev, M_t) -> nn.Tensor:
        return nn.matmul(nn.concat([_t(M_prev), _t(M_t)], axis=1), self.W_M)

    def decoder_step(self, m_t: nn.Tensor, action_idx, state: "PredictorState") -> tuple[nn.Tensor, nn.Tensor]:
        if state is None or state.h is None:
            raise RuntimeError("decoder_step needs an initialized PredictorState")
        a = nn.embedding(self.A, action_idx)
        return nn.lstm_step(nn.concat([m_t, a], axis=1), state.h, state.c, self.W_lstm, self.b_lstm)

    def predict_map(self, h: nn.Tensor) -> nn.Tensor:
        B = h.shape[0]
        logits = nn.add(nn.matmul(h, self.W_out), self.b_out)
        return nn.softmax(nn.reshape(logits, (B, self.g * self.g, N_CATEGORIES)), axis=-1)

    def step(self, M_t: np.ndarray, state: "PredictorState") -> tuple[nn.Tensor, "PredictorState"]:
        """One decoding step for a batch; ``M_t`` is (B, g*g*C) one-hot."""
        self.calls += 1
        m = self.map_feature(state.M_prev, M_t)
        h, c = self.decoder_step(m, state.action, state)
        probs = self.predict_map(h)
        return probs, PredictorState(h, c, M_t, state.action)


@dataclass
class PredictorState:
    h: nn.Tensor
    c: nn.Tensor
    M_prev: np.ndarray
    action: np.ndarray  # (B,) previous action index fed at the next step

    def with_action(self, action) -> "PredictorState":
        return PredictorState(self.h, self.c, self.M_prev, np.asarray(action, dtype=np.int64))

    def detached(self) -> "PredictorState":
        return PredictorState(self.h.detach(), self.c.detach(), self.M_prev, self.action)


def _t(x) -> nn.Tensor:
    return x if isinstance(x, nn.Tensor) else nn.Tensor(x)


# ------------------------------------------------------------------ data

class ViewCache:
    """Projected and ground-truth label maps per (house, viewpoint, heading)."""

    def __init__(self, houses: dict[int, tuple[HouseLayout, NavGraph]], g: int, s: float = CELL_SIZE):
        self.houses, self.g, self.s = houses, g, s
        self._proj: dict = {}
        self._gt: dict = {}

    def pose(self, hid: int, vid: int, heading: int) -> Pose:
        house, graph = self.houses[hid]
        r, c = graph.nodes[vid].cell
        return Pose.at_cell(r, c, heading, house.cell_size)

    def projected(self, hid, vid, heading) -> np.ndarray:
        key = (hid, vid, heading)
        v = self._proj.get(key)
        if v is None:
            house = self.houses[hid][0]
            v = project_labels(observe(house, self.pose(hid, vid, heading)), self.g, self.s).ravel()
            self._proj[key] = v
        return v

    def ground_truth(self, hid, vid, heading) -> np.ndarray:
        key = (hid, vid, heading)
        v = self._gt.get(key)
        if v is None:
            house = self.houses[hid][0]
            v = ground_truth_labels(house, self.pose(hid, vid, heading), self.g, self.s).ravel()
            self._gt[key] = v
        return v


@dataclass
class SequenceBatch:
    proj: np.ndarray  # (T, B, g*g) labels
    gt: np.ndarray  # (T, B, g*g)
    action: np.ndarray  # (T, B) action fed at that step
    mask: np.ndarray  # (T, B) bool


def path_sequence(cache: ViewCache, hid: int, path, start_heading: int):
    """Per-node (viewpoint, heading, action-in) along a path; headings follow moves."""
    graph = cache.houses[hid][1]
    out = [(path[0], start_heading, START_ACTION)]
    heading = start_heading
    for v, sector in zip(path[1:], move_sectors(path, graph)):
        out.append((v, sector, relative_action(heading, sector)))
        heading = sector
    return out


def sample_sequences(cache: ViewCache, house_ids, n: int, rng: np.random.Generator,
                     max_hops: int = 6, single_view_share: float = 0.25) -> SequenceBatch:
    seqs = []
    for _ in range(n):
        hid = int(house_ids[rng.integers(len(house_ids))])
        graph = cache.houses[hid][1]
        heading = int(rng.integers(N_SECTORS))
        if rng.random() < single_view_share:
            nodes = sorted(graph.nodes)
            seqs.append([(hid, nodes[rng.integers(len(nodes))], heading, START_ACTION)])
            continue
        pairs = qualifying_pairs(graph, 1, max_hops)
        a, b = pairs[rng.integers(len(pairs))]
        path = all_shortest_paths(graph)[(a, b)]
        seqs.append([(hid,) + x for x in path_sequence(cache, hid, path, heading)])
    return _pack(cache, seqs)


def _pack(cache: ViewCache, seqs) -> SequenceBatch:
    T = max(len(s) for s in seqs)
    B = len(seqs)
    gg = cache.g * cache.g
    proj = np.full((T, B, gg), UNKNOWN, np.int64)
    gt = np.full((T, B, gg), UNKNOWN, np.int64)
    act = np.full((T, B), START_ACTION, np.int64)
    mask = np.zeros((T, B), bool)
    for b, seq in enumerate(seqs):
        for t, (hid, vid, heading, a) in enumerate(seq):
            proj[t, b] = cache.projected(hid, vid, heading)
            gt[t, b] = cache.ground_truth(hid, vid, heading)
            act[t, b] = a
            mask[t, b] = True
    return SequenceBatch(proj, gt, act, mask)


def all_single_views(cache: ViewCache, house_ids) -> SequenceBatch:
    seqs = []
    for hid in house_ids:
        for vid in sorted(cache.houses[hid][1].nodes):
            for h in range(N_SECTORS):
                seqs.append([(hid, vid, h, START_ACTION)])
    return _pack(cache, seqs)


def sequence_loss(model: LocalityPredictor, batch: SequenceBatch) -> nn.Tensor:
    """Mean over supervised steps of the per-cell cross-entropy summed over cells."""
    T, B, gg = batch.proj.shape
    state = model.initial_state(B)
    total = None
    n = batch.mask.sum()
    for t in range(T):
        state = state.with_action(batch.action[t])
        probs, state = model.step(one_hot(batch.proj[t]).reshape(B, -1), state)
        ce = nn.tsum(nn.cross_entropy(probs, batch.gt[t]), axis=1)  # (B,)
        ce = nn.mul(ce, nn.Tensor(batch.mask[t].astype(float)))
        term = nn.tsum(ce)
        total = term if total is None else nn.add(total, term)
    return nn.scale(total, 1.0 / max(int(n), 1))


# ------------------------------------------------------------- training

@dataclass
class PredictorLog:
    rows: list = field(default_factory=list)  # (step, loss, val_acc)

    def csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["step", "loss", "val_cell_acc"])
        for step, loss, acc in self.rows:
            w.writerow([step, f"{loss:.6f}", "" if acc is None else f"{acc:.4f}"])
        return out.getvalue()


def train_predictor(houses: dict[int, tuple[HouseLayout, NavGraph]], train_ids, config: PredictorConfig,
                    log: PredictorLog | None = None) -> LocalityPredictor:
    train_ids = sorted(int(h) for h in train_ids)
    if not train_ids:
        raise ValueError("train_predictor: empty dataset")
    cfg = config
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1009]))
    perm = list(rng.permutation(train_ids))
    n_val = int(round(cfg.val_fraction * len(perm))) if len(perm) >= 5 else 0
    val_ids, fit_ids = sorted(perm[:n_val]), sorted(perm[n_val:])
    cache = ViewCache(houses, cfg.g, cfg.s)
    model = LocalityPredictor(cfg.g, cfg.s, cfg.map_dim, cfg.hidden, seed=cfg.seed)
    opt = nn.AdamW(model.params, nn.AdamWConfig(lr=cfg.lr, weight_decay=cfg.weight_decay,
                                                clip_norm=cfg.clip_norm))
    val_batch = all_single_views(cache, val_ids) if val_ids else None
    best, best_arrays, bad = -1.0, model.arrays(), 0
    log = log if log is not None else PredictorLog()
    for step in range(1, cfg.steps + 1):
        batch = sample_sequences(cache, fit_ids, cfg.batch, rng, cfg.max_hops)
        model.zero_grad()
        loss = sequence_loss(model, batch)
        loss.backward()
        opt.step()
        acc = None
        if val_batch is not None and (step % cfg.eval_interval == 0 or step == cfg.steps):
            acc = cell_accuracy(model, val_batch)
            if acc > best:
                best, best_arrays, bad = acc, model.arrays(), 0
            else:
                bad += 1
        log.rows.append((step, float(loss.data), acc))
        if bad >= cfg.patience:
            break
    if val_batch is not None:
        model.load_arrays(best_arrays)
    model.calls = 0
    return model


def predict_batch(model: LocalityPredictor, batch: SequenceBatch) -> np.ndarray:
    """(T, B, g*g) argmax predictions."""
    T, B, gg = batch.proj.shape
    out = np.zeros((T, B, gg), np.int64)
    with nn.no_grad():
        state = model.initial_state(B)
        for t in range(T):
            state = state.with_action(batch.action[t])
            probs, state = model.step(one_hot(batch.proj[t]).reshape(B, -1), state)
            out[t] = probs.data.argmax(axis=-1)
    return out


def cell_accuracy(model: LocalityPredictor, batch: SequenceBatch) -> float:
    pred = predict_batch(model, batch)
    m = batch.mask[..., None] & np.ones_like(pred, bool)
    return float((pred == batch.gt)[m].mean())


@dataclass
class PredictorReport:
    visible_acc: float
    occluded_acc: float
    majority_occluded_acc: float
    here_occluded_acc: float
    confusion: np.ndarray  # (C, C) rows ground truth, columns prediction
    n_visible: int
    n_occluded: int

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("confusion")
        return d


def eval_predictor(model: LocalityPredictor, houses, house_ids, kb: AdjacencyMatrix | None = None) -> PredictorReport:
    """Single-view accuracy over every viewpoint and heading of the given houses.

    Occluded cells are those the projection leaves unknown. Two reference
    scores come along: the KB majority type, and copying the agent's own room.
    """
    cache = ViewCache(houses, model.g, model.s)
    batch = all_single_views(cache, sorted(house_ids))
    pred = predict_batch(model, batch)[0]
    proj, gt = batch.proj[0], batch.gt[0]
    occ = proj == UNKNOWN
    vis = ~occ
    conf = np.zeros((N_CATEGORIES, N_CATEGORIES), np.int64)
    np.add.at(conf, (gt.ravel(), pred.ravel()), 1)
    centre = (model.g * model.g) // 2
    here = np.repeat(proj[:, centre:centre + 1], proj.shape[1], axis=1)
    majority = kb.majority_type() if kb is not None else int(np.bincount(gt.ravel()).argmax())
    return PredictorReport(
        visible_acc=float((pred == gt)[vis].mean()) if vis.any() else 0.0,
        occluded_acc=float((pred == gt)[occ].mean()) if occ.any() else 0.0,
        majority_occluded_acc=float((gt[occ] == majority).mean()) if occ.any() else 0.0,
        here_occluded_acc=float((here == gt)[occ].mean()) if occ.any() else 0.0,
        confusion=conf, n_visible=int(vis.sum()), n_occluded=int(occ.sum()))
