"""Run configuration: flat key=value text files, named profiles, and
per-stage fingerprints used to stamp and check artifacts."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields

PROFILES = ("smoke", "desk", "paper-faithful")
TOOL_VERSION = "winnav 0.1.0"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    profile: str = "desk"
    seed: int = 0
    out_dir: str = "runs/desk"
    workers: int = 1

    # world + episodes
    n_houses: int = 240
    canvas: int = 18
    room_size_min: int = 3
    room_size_max: int = 5
    door_probability: float = 0.15
    train_per_house: int = 10
    seen_per_house: int = 1
    unseen_per_house: int = 4
    min_hops: int = 1
    max_hops: int = 5

    # predictor
    g: int = 5
    s: float = 1.0  # locality-map cell, two house cells
    pred_map_dim: int = 64
    pred_hidden: int = 64
    pred_steps: int = 800
    pred_batch: int = 32
    pred_lr: float = 1e-3
    pred_weight_decay: float = 0.0

    # agent
    d: int = 32
    hidden: int = 64
    agent_steps: int = 4000
    agent_batch: int = 8
    agent_lr: float = 1e-3
    agent_weight_decay: float = 0.0
    lambda_il: float = 0.2
    gamma: float = 0.95
    goal_weight: float = 0.1
    max_steps: int = 15
    eval_interval: int = 500
    eval_episodes: int = 96
    map_mode: str = "predicted"

    # ablations
    grid_list: str = "3,5,7,9"

    def validate(self) -> None:
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}; choose from {', '.join(PROFILES)}")
        if self.g < 1 or self.g % 2 == 0:
            raise ConfigError(f"g must be a positive odd integer, got {self.g}")
        if self.map_mode not in ("random_type_random_dir", "random_dir_gt_type", "predicted", "gt"):
            raise ConfigError(f"unknown map_mode {self.map_mode!r}")
        if self.workers != 1:
            raise ConfigError("only workers=1 is supported (bit-exact logs)")
        for g in self.grids():
            if g < 1 or g % 2 == 0:
                raise ConfigError(f"grid_list entries must be odd, got {g}")

    def grids(self) -> list[int]:
        return [int(x) for x in self.grid_list.split(",") if x.strip()]

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **kw) -> "RunConfig":
        return apply_overrides(self, kw)


_SMOKE = dict(n_houses=40, pred_steps=60, pred_map_dim=32, pred_hidden=32, agent_steps=24, d=16,
              hidden=32, eval_interval=12, eval_episodes=16, train_per_house=4, unseen_per_house=2,
              grid_list="3,5")
_FAITHFUL = dict(agent_batch=8, agent_lr=1e-4, pred_steps=3000, agent_steps=20000, eval_interval=1000,
              eval_episodes=192)


def profile_config(name: str, seed: int = 0) -> RunConfig:
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; choose from {', '.join(PROFILES)}")
    base = RunConfig(profile=name, seed=seed, out_dir=f"runs/{name}")
    if name == "smoke":
        base = apply_overrides(base, _SMOKE)
    elif name == "paper-faithful":
        base = apply_overrides(base, _FAITHFUL)
    return base


def _coerce(name: str, typ, raw):
    if isinstance(raw, str):
        raw = raw.strip()
    try:
        if typ in (int, "int"):
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        return str(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {name!r}: cannot parse {raw!r} as {getattr(typ, '__name__', typ)}") from None


def apply_overrides(cfg: RunConfig, values: dict) -> RunConfig:
    types = {f.name: f.type for f in fields(RunConfig)}
    unknown = sorted(set(values) - set(types))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    kw = {k: _coerce(k, types[k], v) for k, v in values.items()}
    out = dataclasses.replace(cfg, **kw)
    out.validate()
    return out


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """``key = value`` lines; ``#`` starts a comment. A ``profile`` key, if
    present, selects the defaults the remaining keys override."""
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected key = value, got {line!r}")
        k, v = (x.strip() for x in line.split("=", 1))
        if k in values:
            raise ConfigError(f"config line {n}: duplicate key {k!r}")
        values[k] = v
    if base is None:
        base = profile_config(values.get("profile", "desk"), int(values.get("seed", 0)))
    return apply_overrides(base, values)


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.as_dict().items())


# keys each stage depends on, upstream included
_STAGE_KEYS = {
    "houses": ("seed", "n_houses", "canvas", "room_size_min", "room_size_max", "door_probability"),
    "episodes": ("train_per_house", "seen_per_house", "unseen_per_house", "min_hops", "max_hops"),
    "kb": (),
    "predictor": ("g", "s", "pred_map_dim", "pred_hidden", "pred_steps", "pred_batch", "pred_lr",
                  "pred_weight_decay"),
    "agent": ("d", "hidden", "agent_steps", "agent_batch", "agent_lr", "agent_weight_decay", "lambda_il",
              "gamma", "goal_weight", "max_steps", "eval_interval", "eval_episodes", "map_mode"),
}
_UPSTREAM = {"houses": (), "episodes": ("houses",), "kb": ("houses",), "predictor": ("houses", "kb"),
             "agent": ("episodes", "predictor")}


def stage_keys(stage: str) -> tuple[str, ...]:
    keys = list(_STAGE_KEYS[stage])
    for up in _UPSTREAM[stage]:
        keys += stage_keys(up)
    return tuple(sorted(set(keys)))


def stage_fingerprint(cfg: RunConfig, stage: str) -> str:
    d = cfg.as_dict()
    norm = {k: d[k] for k in stage_keys(stage)}
    norm["_stage"] = stage
    norm["_version"] = TOOL_VERSION
    return hashlib.sha256(json.dumps(norm, sort_keys=True).encode()).hexdigest()[:16]


def config_fingerprint(cfg: RunConfig) -> str:
    d = cfg.as_dict()
    d.pop("out_dir")
    d.pop("profile")
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]
