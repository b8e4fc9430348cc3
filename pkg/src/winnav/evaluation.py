"""Navigation metrics, greedy split evaluation, reports and the two ablations."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .core import NavGraph, geodesic_distance
from .worldgen import Episode

SUCCESS_RADIUS = 3.0
METRICS = ("TL", "NE", "SR", "SPL", "OSR")
EPISODE_COLUMNS = ("episode_id", "house_id", "TL", "NE", "SR", "SPL", "OSR", "steps")

REFERENCE_GRID_TABLE = {3: (64.23, 58.47), 5: (79.76, 72.29), 7: (73.96, 61.38), 9: (59.14, 51.33)}
REFERENCE_MAPTYPE_TABLE = {
    "random_type_random_dir": (31.40, 28.63),
    "random_dir_gt_type": (49.21, 35.18),
    "predicted": (72.29, 64.37),
    "gt": (78.22, 67.16),
}


def episode_metrics(path, episode: Episode, graph: NavGraph, success_radius: float = SUCCESS_RADIUS) -> dict:
    """TL, NE, SR, SPL, OSR for one executed path (SR/SPL/OSR as 0/1 fractions)."""
    path = list(path)
    tl = float(sum(graph.edge_length(a, b) for a, b in zip(path, path[1:])))
    goal = episode.goal
    ne = geodesic_distance(graph, path[-1], goal)
    sr = 1.0 if ne <= success_radius else 0.0
    L = geodesic_distance(graph, episode.start, goal)
    spl = sr * L / max(tl, L) if max(tl, L) > 0 else sr
    osr = 1.0 if min(geodesic_distance(graph, v, goal) for v in path) <= success_radius else 0.0
    return {"TL": tl, "NE": ne, "SR": sr, "SPL": spl, "OSR": osr}


@dataclass
class EvalReport:
    rows: list  # dicts with EPISODE_COLUMNS
    summary: dict  # TL, NE in units; SR, SPL, OSR in percent
    fingerprint: str = ""
    seed: int = 0
    split: str = ""

    @classmethod
    def from_rows(cls, rows, fingerprint: str = "", seed: int = 0, split: str = "") -> "EvalReport":
        n = max(len(rows), 1)
        summ = {}
        for k in METRICS:
            m = sum(r[k] for r in rows) / n
            summ[k] = 100.0 * m if k in ("SR", "SPL", "OSR") else m
        return cls(list(rows), summ, fingerprint, seed, split)


def evaluate(agent, episodes: list[Episode], houses: dict, predictor=None, map_mode: str = "predicted",
             seed: int = 0, batch: int = 32, max_steps: int = 15, fingerprint: str = "",
             split: str = "", success_radius: float = SUCCESS_RADIUS) -> EvalReport:
    """Greedy rollouts over every episode; a pure function of its inputs."""
    from .training import make_source, rollout

    rows = []
    with nn.no_grad():
        for i in range(0, len(episodes), batch):
            eps = episodes[i:i + batch]
            src = make_source(agent, map_mode, predictor, seed + i)
            traj = rollout(agent, eps, houses, src, "greedy", max_steps=max_steps, success_radius=success_radius)
            for ep, path in zip(eps, traj.paths):
                m = episode_metrics(path, ep, houses[ep.house_id][1], success_radius)
                rows.append({"episode_id": ep.episode_id, "house_id": ep.house_id, **m, "steps": len(path) - 1})
    return EvalReport.from_rows(rows, fingerprint, seed, split)


def evaluate_policy(choose, episodes: list[Episode], houses: dict, max_steps: int = 15,
                    success_radius: float = SUCCESS_RADIUS) -> EvalReport:
    """Evaluate a plain callable ``choose(episode, graph, node, step) -> next node or None``."""
    rows = []
    for ep in episodes:
        graph = houses[ep.house_id][1]
        path = [ep.start]
        for t in range(max_steps):
            nxt = choose(ep, graph, path[-1], t)
            if nxt is None:
                break
            path.append(nxt)
        m = episode_metrics(path, ep, graph, success_radius)
        rows.append({"episode_id": ep.episode_id, "house_id": ep.house_id, **m, "steps": len(path) - 1})
    return EvalReport.from_rows(rows)


def uniform_random_success(episode: Episode, graph: NavGraph, max_steps: int = 15,
                           success_radius: float = SUCCESS_RADIUS) -> float:
    """Exact success probability of the policy choosing uniformly among
    STOP and the neighbours, by exhaustive enumeration of action sequences."""
    goal = episode.goal
    ok = {v: geodesic_distance(graph, v, goal) <= success_radius for v in graph.nodes}

    memo: dict = {}

    def rec(v, t):
        if (v, t) in memo:
            return memo[(v, t)]
        nb = graph.neighbors(v)
        k = len(nb) + 1
        p_stop = 1.0 / k
        if t == max_steps - 1:
            # last decision: any move is followed by the forced cutoff there
            val = p_stop * ok[v] + sum(ok[n] for n in nb) / k
        else:
            val = p_stop * ok[v] + sum(rec(n, t + 1) for n in nb) / k
        memo[(v, t)] = val
        return val

    return rec(episode.start, 0)


# ------------------------------------------------------------------ report

def report_csv(report: EvalReport) -> str:
    out = io.StringIO()
    out.write(f"# fingerprint={report.fingerprint} seed={report.seed} split={report.split}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(EPISODE_COLUMNS)
    for r in report.rows:
        w.writerow([r["episode_id"], r["house_id"]] + [f"{r[k]:.4f}" for k in METRICS] + [r["steps"]])
    return out.getvalue()


def parse_report_csv(text: str) -> EvalReport:
    lines = text.splitlines()
    head = dict(kv.split("=", 1) for kv in lines[0][2:].split())
    rows = []
    for rec in csv.DictReader(lines[1:]):
        row = {"episode_id": int(rec["episode_id"]), "house_id": int(rec["house_id"]), "steps": int(rec["steps"])}
        row.update({k: float(rec[k]) for k in METRICS})
        rows.append(row)
    return EvalReport.from_rows(rows, head.get("fingerprint", ""), int(head.get("seed", 0)), head.get("split", ""))


def summary_text(reports: dict[str, EvalReport]) -> str:
    """Human-readable summary; includes the seen-unseen SR gap when both are present."""
    lines = []
    fp = next(iter(reports.values())).fingerprint if reports else ""
    seed = next(iter(reports.values())).seed if reports else 0
    lines.append(f"fingerprint {fp}  seed {seed}")
    for name, rep in reports.items():
        s = rep.summary
        lines.append(f"{name:12s} " + "  ".join(f"{k} {s[k]:.2f}" for k in METRICS) + f"  n={len(rep.rows)}")
    if "val_seen" in reports and "val_unseen" in reports:
        gap = reports["val_seen"].summary["SR"] - reports["val_unseen"].summary["SR"]
        lines.append(f"seen-unseen SR gap {gap:.2f}")
    return "\n".join(lines) + "\n"


def table_csv(header, rows) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{v:.4f}" if isinstance(v, float) else v for v in r])
    return out.getvalue()


def fingerprint(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


# ---------------------------------------------------------------- ablations

@dataclass
class AblationResult:
    header: tuple
    rows: list = field(default_factory=list)

    def csv(self) -> str:
        return table_csv(self.header, self.rows)


def ablate_grid(run_setting, g_list=(3, 5, 7, 9)) -> AblationResult:
    """``run_setting(g) -> (seen_sr, unseen_sr)`` trains predictor + agent at g."""
    res = AblationResult(("g", "val_seen_sr", "val_unseen_sr", "ref_val_seen_sr", "ref_val_unseen_sr"))
    for g in g_list:
        seen, unseen = run_setting(g)
        ps, pu = REFERENCE_GRID_TABLE.get(g, (float("nan"), float("nan")))
        res.rows.append((g, float(seen), float(unseen), ps, pu))
    return res


def ablate_maptype(agent, episodes, houses, predictor, seed: int = 0, max_steps: int = 15) -> AblationResult:
    """Evaluate one WIN checkpoint under each map source (Table 4 rows #1-#4)."""
    if not agent.config.locality:
        raise ValueError("map-type ablation needs a WIN agent")
    res = AblationResult(("row", "mode", "SR", "SPL", "ref_SR", "ref_SPL", "predictor_calls"))
    for i, mode in enumerate(("random_type_random_dir", "random_dir_gt_type", "predicted", "gt"), start=1):
        before = predictor.calls if predictor is not None else 0
        rep = evaluate(agent, episodes, houses, predictor if mode == "predicted" else None, mode, seed, max_steps=max_steps)
        calls = (predictor.calls - before) if predictor is not None else 0
        psr, pspl = REFERENCE_MAPTYPE_TABLE[mode]
        res.rows.append((i, mode, rep.summary["SR"], rep.summary["SPL"], psr, pspl, calls))
    return res
