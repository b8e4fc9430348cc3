"""``winnav`` command line: one subcommand per pipeline stage.

Every stage writes its files plus a ``<stage>.manifest.json`` stamp into
the run directory. Downstream stages refuse to read an artifact whose
stamp does not match the fingerprint the current config would produce.

Exit codes: 0 ok, 1 usage error, 2 data or fingerprint error, 3 failed
assertion (``--assert`` on eval and the ablations).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import nn
from .agent import MAP_MODES, WinAgent
from .config import (PROFILES, TOOL_VERSION, ConfigError, RunConfig, apply_overrides, config_fingerprint,
                     dump_config, parse_config, profile_config, stage_fingerprint)
from .core import dump_house, load_house
from .evaluation import ablate_grid, ablate_maptype, evaluate, report_csv, summary_text
from .kb import build_adjacency, dump_kb, heatmap_csv, load_kb
from .predictor import LocalityPredictor, PredictorConfig, PredictorLog, eval_predictor, train_predictor
from .training import TrainConfig, TrainLog, build_agent, train_agent
from .worldgen import (GENERATOR_VERSION, LayoutPrior, Split, build_episodes, build_houses, dump_episodes,
                       load_episodes, split_dataset)

SPLITS = ("train", "val_seen", "val_unseen")


class DataError(RuntimeError):
    """Missing, stale or mismatched artifact (exit code 2)."""


class AssertionFailed(RuntimeError):
    """A required ordering did not hold (exit code 3)."""


# ------------------------------------------------------------- artifacts

class Run:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.dir = Path(cfg.out_dir)
        self._houses = None

    def path(self, name: str) -> Path:
        return self.dir / name

    def write(self, name: str, data) -> Path:
        p = self.path(name)
        p.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(data, bytes):
            p.write_bytes(data)
        else:
            p.write_text(data)
        return p

    def stamp(self, stage: str, files, extra: dict | None = None, cfg: RunConfig | None = None) -> None:
        cfg = cfg or self.cfg
        man = {"stage": stage, "fingerprint": stage_fingerprint(cfg, stage), "version": TOOL_VERSION,
               "files": sorted(str(f) for f in files), **(extra or {})}
        self.write(_manifest_name(stage, cfg), json.dumps(man, sort_keys=True, indent=1) + "\n")

    def require(self, stage: str, cfg: RunConfig | None = None) -> dict:
        cfg = cfg or self.cfg
        p = self.path(_manifest_name(stage, cfg))
        if not p.exists():
            raise DataError(f"missing artifact {p}; run the {stage} stage first")
        man = json.loads(p.read_text())
        want = stage_fingerprint(cfg, stage)
        if man.get("fingerprint") != want:
            raise DataError(f"stale artifact {p}: fingerprint {man.get('fingerprint')} but the current "
                            f"config expects {want}; rerun the {stage} stage")
        for f in man["files"]:
            if not self.path(f).exists():
                raise DataError(f"missing artifact {self.path(f)} listed in {p}")
        return man

    # loaders
    def houses(self) -> tuple[dict, Split]:
        man = self.require("houses")
        if self._houses is None:
            hs = {}
            for f in man["files"]:
                h = int(Path(f).stem[1:])
                hs[h] = load_house(self.path(f).read_text())
            self._houses = hs
        sp = man["split"]
        return self._houses, Split(tuple(sp["train"]), tuple(sp["train"]), tuple(sp["val_unseen"]))

    def episodes(self) -> dict:
        self.require("episodes")
        return {s: load_episodes(self.path(f"episodes/{s}.txt").read_text()) for s in SPLITS}

    def kb(self):
        self.require("kb")
        return load_kb(self.path("kb.txt").read_text())

    def predictor(self, cfg: RunConfig | None = None) -> LocalityPredictor:
        cfg = cfg or self.cfg
        self.require("predictor", cfg)
        return LocalityPredictor.from_checkpoint(nn.load(self.path(_pred_name(cfg)), "predictor"))


def _manifest_name(stage: str, cfg: RunConfig) -> str:
    # predictors are kept per grid size so the grid ablation can reuse them
    return f"predictor_g{cfg.g}.manifest.json" if stage == "predictor" else f"{stage}.manifest.json"


def _pred_name(cfg: RunConfig) -> str:
    return f"predictor_g{cfg.g}.ckpt"


def _agent_name(kind: str, cfg: RunConfig) -> str:
    return f"agent_{kind}_g{cfg.g}.ckpt" if kind == "win" else "agent_baseline.ckpt"


def _prior(cfg: RunConfig) -> LayoutPrior:
    p = LayoutPrior(room_size_range=(cfg.room_size_min, cfg.room_size_max),
                    door_probability=cfg.door_probability, canvas=cfg.canvas)
    p.validate()
    return p


# ---------------------------------------------------------------- stages

def stage_gen_houses(run: Run) -> dict:
    cfg = run.cfg
    prior = _prior(cfg)
    houses = build_houses(prior, cfg.n_houses, cfg.seed)
    split = split_dataset(list(houses), seed=cfg.seed)
    files = []
    for h, (house, graph) in houses.items():
        files.append(run.write(f"houses/h{h:04d}.txt", dump_house(house, graph)).relative_to(run.dir))
    run.stamp("houses", files, {"split": {"train": list(split.train), "val_unseen": list(split.val_unseen)},
                                "generator": GENERATOR_VERSION, "prior": prior.fingerprint(), "seed": cfg.seed})
    run._houses = houses
    return {"houses": len(houses), "train_houses": len(split.train), "unseen_houses": len(split.val_unseen)}


def stage_gen_episodes(run: Run) -> dict:
    cfg = run.cfg
    houses, split = run.houses()
    eps = build_episodes(houses, split, cfg.seed, cfg.train_per_house, cfg.seen_per_house,
                         cfg.unseen_per_house, cfg.min_hops, cfg.max_hops)
    files = [run.write(f"episodes/{s}.txt", dump_episodes(eps[s])).relative_to(run.dir) for s in SPLITS]
    run.stamp("episodes", files)
    return {f"episodes_{s}": len(eps[s]) for s in SPLITS}


def stage_build_kb(run: Run) -> dict:
    houses, split = run.houses()
    kb = build_adjacency([houses[h][0] for h in split.train])
    run.write("kb.txt", dump_kb(kb))
    run.write("kb_navigability.csv", heatmap_csv(kb, "navigability"))
    run.stamp("kb", ["kb.txt", "kb_navigability.csv"])
    return {"kb_houses": kb.n_houses, "majority_type": int(kb.majority_type())}


def _pred_config(cfg: RunConfig) -> PredictorConfig:
    return PredictorConfig(g=cfg.g, s=cfg.s, map_dim=cfg.pred_map_dim, hidden=cfg.pred_hidden,
                           steps=cfg.pred_steps, batch=cfg.pred_batch, lr=cfg.pred_lr,
                           weight_decay=cfg.pred_weight_decay, seed=cfg.seed)


def stage_train_predictor(run: Run, cfg: RunConfig | None = None) -> dict:
    cfg = cfg or run.cfg
    houses, split = run.houses()
    kb = run.kb()
    log = PredictorLog()
    model = train_predictor(houses, split.train, _pred_config(cfg), log)
    rep = eval_predictor(model, houses, split.val_unseen, kb)
    fp = stage_fingerprint(cfg, "predictor")
    meta = {**model.config_meta(), "fingerprint": fp, "version": TOOL_VERSION}
    name = _pred_name(cfg)
    run.write(name, nn.to_bytes(model.checkpoint(len(log.rows), meta)))
    run.write(f"predictor_g{cfg.g}_curve.csv", log.csv())
    summ = {k: round(v, 6) if isinstance(v, float) else v for k, v in rep.summary().items()}
    run.write(f"predictor_g{cfg.g}_eval.json", json.dumps(summ, sort_keys=True, indent=1) + "\n")
    run.stamp("predictor", [name, f"predictor_g{cfg.g}_curve.csv", f"predictor_g{cfg.g}_eval.json"], cfg=cfg)
    return {"predictor_occluded_acc": rep.occluded_acc, "kb_majority_occluded_acc": rep.majority_occluded_acc}


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(steps=cfg.agent_steps, batch=cfg.agent_batch, lr=cfg.agent_lr,
                       weight_decay=cfg.agent_weight_decay, lambda_il=cfg.lambda_il, gamma=cfg.gamma,
                       goal_weight=cfg.goal_weight, max_steps=cfg.max_steps, eval_interval=cfg.eval_interval,
                       eval_episodes=cfg.eval_episodes, seed=cfg.seed, map_mode=cfg.map_mode)


def stage_train_agent(run: Run, kind: str = "win", cfg: RunConfig | None = None) -> dict:
    cfg = cfg or run.cfg
    houses, _ = run.houses()
    eps = run.episodes()
    pred = run.predictor(cfg) if kind == "win" else None
    agent = build_agent(cfg.g, kind == "win", cfg.seed, cfg.d, cfg.hidden, cfg.s)
    # checkpoint selection on ValSeen keeps the unseen houses out of training
    log = train_agent(agent, eps["train"], eps["val_seen"], houses, _train_config(cfg), pred, TrainLog())
    fp = stage_fingerprint(cfg, "agent")
    meta = {**agent.config_meta(), "fingerprint": fp, "version": TOOL_VERSION, "map_mode": cfg.map_mode}
    name = _agent_name(kind, cfg)
    run.write(name, nn.to_bytes(agent.checkpoint(cfg.agent_steps, meta)))
    curve = name.replace(".ckpt", "_log.csv")
    run.write(curve, log.csv())
    evals = [r for r in log.rows if r[4] is not None]
    best = max((r[5] for r in evals), default=0.0)
    return {f"{kind}_best_val_seen_spl": best, f"{kind}_checkpoint": str(run.path(name))}


def _load_agent(run: Run, path: str) -> WinAgent:
    try:
        ck = nn.load(path)
    except FileNotFoundError:
        raise DataError(f"missing artifact {path}") from None
    except nn.CheckpointError as e:
        raise DataError(str(e)) from None
    if ck.kind not in ("win", "baseline"):
        raise DataError(f"checkpoint {path} holds a {ck.kind!r} model, expected an agent (win or baseline)")
    fp = ck.meta.get("fingerprint")
    if fp is not None and fp != stage_fingerprint(run.cfg.replace(g=int(ck.meta["g"])), "agent"):
        raise DataError(f"stale artifact {path}: fingerprint {fp} does not match the current config")
    return WinAgent.from_checkpoint(ck)


def stage_eval(run: Run, paths: list[str], do_assert: bool = False) -> dict:
    cfg = run.cfg
    houses, _ = run.houses()
    eps = run.episodes()
    out, unseen_sr = {}, []
    for path in paths:
        agent = _load_agent(run, path)
        pred = run.predictor(cfg.replace(g=agent.config.g)) if agent.config.locality else None
        tag = Path(path).stem
        reps = {}
        for split in ("val_seen", "val_unseen"):
            rep = evaluate(agent, eps[split], houses, pred, cfg.map_mode, seed=cfg.seed,
                           max_steps=cfg.max_steps, fingerprint=config_fingerprint(cfg), split=split)
            run.write(f"reports/{tag}_{split}.csv", report_csv(rep))
            reps[split] = rep
        run.write(f"reports/{tag}_summary.txt", summary_text(reps))
        out[tag] = {s: r.summary for s, r in reps.items()}
        unseen_sr.append(reps["val_unseen"].summary["SR"])
    if do_assert and len(unseen_sr) > 1 and not all(unseen_sr[0] > v for v in unseen_sr[1:]):
        raise AssertionFailed(f"ValUnseen SR of {paths[0]} ({unseen_sr[0]:.2f}) does not exceed "
                              f"the others ({', '.join(f'{v:.2f}' for v in unseen_sr[1:])})")
    return out


def maptype_ordering_holds(sr: list[float]) -> bool:
    """Rows 1..4: #1 < #2, #1 < #3, #3 <= #4 + 2, #4 highest."""
    r1, r2, r3, r4 = sr
    return r1 < r2 and r1 < r3 and r3 <= r4 + 2.0 and r4 >= max(r1, r2, r3)


def grid_interior_optimum(gs: list[int], sr: list[float]) -> bool:
    return sr[gs.index(max(gs))] < max(sr)


def stage_ablate_maptype(run: Run, path: str | None = None, do_assert: bool = False) -> dict:
    cfg = run.cfg
    houses, _ = run.houses()
    eps = run.episodes()
    agent = _load_agent(run, path or str(run.path(_agent_name("win", cfg))))
    pred = run.predictor(cfg.replace(g=agent.config.g))
    res = ablate_maptype(agent, eps["val_unseen"], houses, pred, cfg.seed, cfg.max_steps)
    run.write("ablate_maptype.csv", res.csv())
    srs = [r[2] for r in res.rows]
    if do_assert and not maptype_ordering_holds(srs):
        raise AssertionFailed(f"map-type ordering fails: SR {srs}")
    return {"maptype_sr": dict(zip([r[1] for r in res.rows], srs))}


def stage_ablate_grid(run: Run, do_assert: bool = False) -> dict:
    cfg = run.cfg
    houses, _ = run.houses()
    eps = run.episodes()

    def setting(g):
        c = cfg.replace(g=g)
        try:
            run.require("predictor", c)
        except DataError:
            stage_train_predictor(run, c)
        path = str(run.path(_agent_name("win", c)))
        try:
            agent = _load_agent(run, path)
        except DataError:
            stage_train_agent(run, "win", c)
            agent = _load_agent(run, path)
        pred = run.predictor(c)
        seen = evaluate(agent, eps["val_seen"], houses, pred, cfg.map_mode, cfg.seed, max_steps=cfg.max_steps)
        unseen = evaluate(agent, eps["val_unseen"], houses, pred, cfg.map_mode, cfg.seed, max_steps=cfg.max_steps)
        return seen.summary["SR"], unseen.summary["SR"]

    res = ablate_grid(setting, cfg.grids())
    run.write("ablate_grid.csv", res.csv())
    gs, srs = [r[0] for r in res.rows], [r[2] for r in res.rows]
    if do_assert and not grid_interior_optimum(gs, srs):
        raise AssertionFailed(f"grid ablation peaks at the largest grid: SR {dict(zip(gs, srs))}")
    return {"grid_val_unseen_sr": dict(zip(gs, srs))}


def stage_pipeline(run: Run) -> dict:
    cfg = run.cfg
    out = {}
    out.update(stage_gen_houses(run))
    out.update(stage_gen_episodes(run))
    out.update(stage_build_kb(run))
    out.update(stage_train_predictor(run))
    out.update(stage_train_agent(run, "win"))
    out.update(stage_train_agent(run, "baseline"))
    paths = [str(run.path(_agent_name(k, cfg))) for k in ("win", "baseline")]
    out["eval"] = stage_eval(run, paths)
    out.update(stage_ablate_maptype(run))
    run.write("config.txt", dump_config(cfg))
    return out


# -------------------------------------------------------------------- main

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="winnav", description="Desk-scale locality-aware navigation workbench")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--profile", choices=PROFILES)
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="run directory (config key out_dir)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    common.add_argument("--json-summary", metavar="PATH", help="write a machine-readable run summary")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("gen-houses", "gen-episodes", "build-kb", "pipeline"):
        sub.add_parser(name, parents=[common])
    p = sub.add_parser("train-predictor", parents=[common])
    p.add_argument("--g", type=int)
    p.add_argument("--s", type=float)
    p.add_argument("--hidden", type=int, dest="pred_hidden")
    p.add_argument("--steps", type=int, dest="pred_steps")
    p = sub.add_parser("train-agent", parents=[common])
    p.add_argument("--baseline", action="store_true", help="train the locality-free baseline")
    p.add_argument("--g", type=int)
    p.add_argument("--steps", type=int, dest="agent_steps")
    p.add_argument("--map-mode", choices=MAP_MODES, dest="map_mode")
    p = sub.add_parser("eval", parents=[common])
    p.add_argument("--checkpoint", action="append", required=True,
                   help="agent checkpoint; repeat to compare (with --assert the first must win on ValUnseen SR)")
    p.add_argument("--map-mode", choices=MAP_MODES, dest="map_mode")
    p.add_argument("--assert", action="store_true", dest="do_assert")
    p = sub.add_parser("ablate-maptype", parents=[common])
    p.add_argument("--checkpoint")
    p.add_argument("--assert", action="store_true", dest="do_assert")
    p = sub.add_parser("ablate-grid", parents=[common])
    p.add_argument("--grids", dest="grid_list", help="comma-separated odd grid sizes")
    p.add_argument("--assert", action="store_true", dest="do_assert")
    return ap


_KEY_FLAGS = ("g", "s", "pred_hidden", "pred_steps", "agent_steps", "map_mode", "grid_list")


def resolve_config(args) -> RunConfig:
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {args.config}: {e.strerror}") from None
        cfg = parse_config(text)
        if args.profile and args.profile != cfg.profile:
            cfg = parse_config(text, profile_config(args.profile, cfg.seed))
    else:
        cfg = profile_config(args.profile or "desk")
    over = {}
    if args.profile:
        over["profile"] = args.profile
    if args.seed is not None:
        over["seed"] = args.seed
    if args.out:
        over["out_dir"] = args.out
    for k in _KEY_FLAGS:
        v = getattr(args, k, None)
        if v is not None:
            over[k] = v
    for kv in args.set:
        if "=" not in kv:
            raise ConfigError(f"--set expects KEY=VALUE, got {kv!r}")
        k, v = kv.split("=", 1)
        over[k.strip()] = v
    return apply_overrides(cfg, over)


def main(argv=None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    try:
        cfg = resolve_config(args)
    except ConfigError as e:
        print(f"winnav: {e}", file=sys.stderr)
        return 1
    run = Run(cfg)
    t0 = time.time()
    code, summary = 0, {}
    try:
        cmd = args.command
        if cmd == "gen-houses":
            summary = stage_gen_houses(run)
        elif cmd == "gen-episodes":
            summary = stage_gen_episodes(run)
        elif cmd == "build-kb":
            summary = stage_build_kb(run)
        elif cmd == "train-predictor":
            summary = stage_train_predictor(run)
        elif cmd == "train-agent":
            summary = stage_train_agent(run, "baseline" if args.baseline else "win")
        elif cmd == "eval":
            summary = stage_eval(run, args.checkpoint, args.do_assert)
        elif cmd == "ablate-maptype":
            summary = stage_ablate_maptype(run, args.checkpoint, args.do_assert)
        elif cmd == "ablate-grid":
            summary = stage_ablate_grid(run, args.do_assert)
        elif cmd == "pipeline":
            summary = stage_pipeline(run)
    except (DataError, nn.CheckpointError) as e:
        print(f"winnav: {e}", file=sys.stderr)
        code = 2
    except AssertionFailed as e:
        print(f"winnav: assertion failed: {e}", file=sys.stderr)
        code = 3
    except ConfigError as e:
        print(f"winnav: {e}", file=sys.stderr)
        code = 1
    if args.json_summary:
        doc = {"command": args.command, "exit_code": code, "fingerprint": config_fingerprint(cfg),
               "profile": cfg.profile, "seed": cfg.seed, "version": TOOL_VERSION,
               "seconds": round(time.time() - t0, 3), "summary": summary}
        Path(args.json_summary).parent.mkdir(parents=True, exist_ok=True)
        Path(args.json_summary).write_text(json.dumps(doc, sort_keys=True, indent=1, default=_jsonable) + "\n")
    elif code == 0 and summary:
        print(json.dumps(summary, sort_keys=True, default=_jsonable))
    return code


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    return str(o)


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
