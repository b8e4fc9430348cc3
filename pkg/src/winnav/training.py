"""Teacher actions, shaped rewards, batched rollouts, imitation and A2C
losses, and the alternating training loop."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .agent import AgentConfig, LocalitySource, NavBatch, WinAgent, instruction_batch
from .core import MAP_CELL_SIZE, NavGraph, geodesic_distance
from .worldgen import Episode, all_shortest_paths

SUCCESS_RADIUS = 3.0
GAMMA = 0.95
TERMINAL_BONUS = 2.0


def teacher_action(episode: Episode, graph: NavGraph, current: int) -> int | None:
    """Next hop on a shortest path to the goal, ``None`` meaning STOP."""
    goal = episode.goal
    if current == goal:
        return None
    path = all_shortest_paths(graph).get((current, goal))
    if path is None:
        raise ValueError(f"goal {goal} unreachable from {current}")
    return path[1]


def step_reward(prev_dist: float, new_dist: float, terminal: bool, success: bool) -> float:
    r = prev_dist - new_dist
    if terminal:
        r += TERMINAL_BONUS if success else -TERMINAL_BONUS
    return r


def discounted_returns(rewards: np.ndarray, mask: np.ndarray, gamma: float = GAMMA) -> np.ndarray:
    """rewards, mask (T, B); returns (T, B) with zeros on inactive steps."""
    T = rewards.shape[0]
    out = np.zeros_like(rewards)
    run = np.zeros(rewards.shape[1])
    for t in range(T - 1, -1, -1):
        run = np.where(mask[t], rewards[t] + gamma * run, 0.0)
        out[t] = run
    return out


@dataclass
class Trajectory:
    """Per-step records for a batch; arrays are (T, B)."""
    probs: list  # nn.Tensor (B, K_t) per step
    values: list  # nn.Tensor (B, 1)
    goal_probs: list  # nn.Tensor (B, N) or None
    chosen: np.ndarray
    teacher: np.ndarray
    active: np.ndarray
    rewards: np.ndarray
    goal_cells: np.ndarray  # (B,)
    paths: list
    stopped: np.ndarray  # (B,) True when the agent chose STOP


def rollout(agent: WinAgent, episodes: list[Episode], houses: dict, source: LocalitySource | None,
            policy: str, rng: np.random.Generator | None = None, max_steps: int = 15,
            success_radius: float = SUCCESS_RADIUS) -> Trajectory:
    """policy: 'teacher' (follow teacher actions), 'sample' or 'greedy'."""
    cfg = agent.config
    nav = NavBatch(episodes, houses, source if cfg.locality or source is not None else None,
                   cfg.g, cfg.s, max_steps)
    if not cfg.locality:
        nav.source = None
    instr = agent.encode_instruction(instruction_batch(episodes, cfg.max_len))
    s = instr.s0
    history: list = []
    B = len(episodes)
    probs, values, goals = [], [], []
    chosen, teacher, active, rewards = [], [], [], []
    goal_cells = nav.goal_cells()
    stopped = np.zeros(B, bool)
    while not nav.done.all():
        feats = nav.features()
        out = agent.step(s, instr, feats, history)
        act = ~nav.done.copy()
        tch = np.zeros(B, np.int64)
        for b in range(B):
            if act[b]:
                nxt = teacher_action(episodes[b], nav.graphs[b], int(nav.node[b]))
                tch[b] = 0 if nxt is None else feats.cand_nodes[b].index(nxt)
        p = out.probs.data
        if policy == "teacher":
            ch = tch.copy()
        elif policy == "greedy":
            ch = p.argmax(axis=1)
        elif policy == "sample":
            u = rng.random(B)
            ch = np.minimum((p.cumsum(axis=1) < u[:, None]).sum(axis=1), p.shape[1] - 1)
        else:
            raise ValueError(f"unknown rollout policy {policy!r}")
        ch = np.where(act, ch, 0)
        prev = np.array([geodesic_distance(nav.graphs[b], int(nav.node[b]), episodes[b].goal) for b in range(B)])
        stopped |= act & (ch == 0)
        nav.apply(ch, feats.cand_nodes)
        new = np.array([geodesic_distance(nav.graphs[b], int(nav.node[b]), episodes[b].goal) for b in range(B)])
        r = np.zeros(B)
        for b in range(B):
            if act[b]:
                term = bool(nav.done[b])
                r[b] = step_reward(prev[b], new[b], term, new[b] <= success_radius)
        probs.append(out.probs)
        values.append(out.value)
        goals.append(out.goal)
        chosen.append(ch)
        teacher.append(tch)
        active.append(act)
        rewards.append(r)
        s = out.state
    return Trajectory(probs, values, goals, np.array(chosen), np.array(teacher), np.array(active),
                      np.array(rewards), goal_cells, nav.paths, stopped)


def _pad_probs(p: nn.Tensor, idx: np.ndarray) -> nn.Tensor:
    return nn.pick(p, idx)


def il_loss(traj: Trajectory, goal_weight: float = 1.0) -> nn.Tensor:
    """Sum over steps of CE(policy, teacher) plus the goal-cell CE, averaged over episodes."""
    B = traj.active.shape[1]
    total = None
    for t, p in enumerate(traj.probs):
        m = nn.Tensor(traj.active[t].astype(float))
        term = nn.tsum(nn.mul(nn.cross_entropy(p, traj.teacher[t]), m))
        g = traj.goal_probs[t]
        if g is not None and goal_weight:
            term = nn.add(term, nn.scale(nn.tsum(nn.mul(nn.cross_entropy(g, traj.goal_cells), m)), goal_weight))
        total = term if total is None else nn.add(total, term)
    return nn.scale(total, 1.0 / B)


def a2c_loss(traj: Trajectory, lambda_il: float = 0.2, gamma: float = GAMMA, value_coef: float = 0.5,
             entropy_coef: float = 0.0, normalize_adv: bool = False, goal_weight: float = 1.0) -> tuple[nn.Tensor, dict]:
    B = traj.active.shape[1]
    returns = discounted_returns(traj.rewards, traj.active, gamma)
    vals = np.stack([v.data[:, 0] for v in traj.values])
    adv = np.where(traj.active, returns - vals, 0.0)
    if normalize_adv and traj.active.sum() > 1:
        a = adv[traj.active]
        adv = np.where(traj.active, adv / (a.std() + 1e-8), 0.0)
    pg = vl = ent = None
    for t, p in enumerate(traj.probs):
        m = traj.active[t].astype(float)
        logp = nn.log(nn.add(nn.pick(p, traj.chosen[t]), nn.Tensor(1.0 - m)))  # inactive rows -> log 1
        term = nn.tsum(nn.mul(logp, nn.Tensor(-adv[t])))
        pg = term if pg is None else nn.add(pg, term)
        diff = nn.sub(nn.reshape(traj.values[t], (B,)), nn.Tensor(returns[t]))
        sq = nn.tsum(nn.mul(nn.mul(diff, diff), nn.Tensor(m)))
        vl = sq if vl is None else nn.add(vl, sq)
        if entropy_coef:
            pe = nn.tsum(nn.mul(p, nn.log(nn.add(p, nn.Tensor(np.full(p.shape, 1e-12))))), axis=1)
            e = nn.tsum(nn.mul(pe, nn.Tensor(m)))
            ent = e if ent is None else nn.add(ent, e)
    loss = nn.add(nn.scale(pg, 1.0 / B), nn.scale(vl, value_coef / B))
    if ent is not None:
        loss = nn.add(loss, nn.scale(ent, entropy_coef / B))
    il = il_loss(traj, goal_weight)
    if lambda_il:
        loss = nn.add(loss, nn.scale(il, lambda_il))
    return loss, {"il": float(il.data), "pg": float(pg.data) / B, "value": float(vl.data) / B}


# ---------------------------------------------------------------- loop

@dataclass
class TrainConfig:
    steps: int = 600  # optimizer updates (IL and RL alternate)
    batch: int = 8
    lr: float = 1e-3
    weight_decay: float = 0.0
    clip_norm: float = 5.0
    lambda_il: float = 0.2
    gamma: float = GAMMA
    max_steps: int = 15
    eval_interval: int = 100
    eval_episodes: int = 96
    entropy_coef: float = 0.0
    goal_weight: float = 0.1
    seed: int = 0
    map_mode: str = "predicted"


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)  # (step, kind, il, rl, sr, spl)

    def csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["step", "kind", "il_loss", "rl_loss", "val_sr", "val_spl"])
        for step, kind, il, rl, sr, spl in self.rows:
            w.writerow([step, kind, f"{il:.6f}", "" if rl is None else f"{rl:.6f}",
                        "" if sr is None else f"{sr:.4f}", "" if spl is None else f"{spl:.4f}"])
        return out.getvalue()


def make_source(agent: WinAgent, mode: str, predictor, seed: int) -> LocalitySource | None:
    if not agent.config.locality:
        return None
    return LocalitySource(mode, agent.config.g, agent.config.s, predictor, seed)


def train_agent(agent: WinAgent, train_eps: list[Episode], val_eps: list[Episode], houses: dict,
                config: TrainConfig, predictor=None, log: TrainLog | None = None) -> TrainLog:
    """Alternate teacher-forced IL and sampled A2C updates; keep the
    parameters with the best validation SPL."""
    from .evaluation import evaluate

    if agent.config.locality and config.map_mode == "predicted" and predictor is None:
        raise ValueError("WIN training in predicted mode needs a predictor checkpoint")
    if not train_eps:
        raise ValueError("train_agent: no training episodes")
    cfg = config
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2024]))
    opt = nn.AdamW(agent.params, nn.AdamWConfig(lr=cfg.lr, weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm))
    log = log if log is not None else TrainLog()
    val = val_eps[:cfg.eval_episodes]
    best, best_arrays = -1.0, agent.arrays()
    for step in range(1, cfg.steps + 1):
        idx = rng.choice(len(train_eps), size=min(cfg.batch, len(train_eps)), replace=False)
        batch = [train_eps[i] for i in sorted(idx)]
        src = make_source(agent, cfg.map_mode, predictor, int(rng.integers(2 ** 31)))
        agent.zero_grad()
        if step % 2 == 1:
            traj = rollout(agent, batch, houses, src, "teacher", max_steps=cfg.max_steps)
            loss = il_loss(traj, cfg.goal_weight)
            kind, il, rl = "il", float(loss.data), None
        else:
            traj = rollout(agent, batch, houses, src, "sample", rng, max_steps=cfg.max_steps)
            loss, stats = a2c_loss(traj, cfg.lambda_il, cfg.gamma, entropy_coef=cfg.entropy_coef,
                                     goal_weight=cfg.goal_weight)
            kind, il, rl = "rl", stats["il"], float(loss.data)
        loss.backward()
        opt.step()
        sr = spl = None
        if val and (step % cfg.eval_interval == 0 or step == cfg.steps):
            rep = evaluate(agent, val, houses, predictor, cfg.map_mode, seed=cfg.seed, max_steps=cfg.max_steps)
            sr, spl = rep.summary["SR"], rep.summary["SPL"]
            if spl > best:
                best, best_arrays = spl, agent.arrays()
        log.rows.append((step, kind, il, rl, sr, spl))
    if val:
        agent.load_arrays(best_arrays)
    agent.opt_state = opt
    return log


def build_agent(g: int, locality: bool, seed: int, d: int = 32, hidden: int = 64, s: float = MAP_CELL_SIZE) -> WinAgent:
    return WinAgent(AgentConfig(d=d, hidden=hidden, locality=locality, g=g, s=s, seed=seed))
