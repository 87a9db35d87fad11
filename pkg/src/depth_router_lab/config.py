"""Run configuration: strict JSON loading with defaults for every field."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .policy import GrpoConfig, RewardSchedule
from .rewards import ERP_REWARDS, PERSPECTIVE_REWARDS, RewardConfig
from .scenes import CameraDomain, GroupConfig, default_groups


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RouterConfig:
    hidden: int = 64
    learning_rate: float = 0.01
    epochs: int = 200


@dataclass(frozen=True)
class RunConfig:
    master_seed: int = 0
    groups: tuple = field(default_factory=lambda: tuple(default_groups()))
    pool: str = "default"
    rewards: RewardSchedule = field(default_factory=RewardSchedule)
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    router: RouterConfig = field(default_factory=RouterConfig)
    max_turns: int = 5
    max_subset: int | None = None
    hard_fraction: float = 0.10
    sweep: tuple = ()  # RewardConfigs applied to every group, one retrained policy each

    def with_seed(self, seed: int | None) -> "RunConfig":
        return self if seed is None else dataclasses.replace(self, master_seed=int(seed))

    def to_json(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "groups": [_group_json(g) for g in self.groups],
            "pool": self.pool,
            "rewards": {"perspective_like": self.rewards.perspective_like.to_json(),
                        "erp_like": self.rewards.erp_like.to_json()},
            "grpo": _grpo_json(self.grpo),
            "router": dataclasses.asdict(self.router),
            "max_turns": self.max_turns,
            "max_subset": self.max_subset,
            "hard_fraction": self.hard_fraction,
            "sweep": [r.to_json() for r in self.sweep],
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _group_json(g: GroupConfig) -> dict:
    d = dataclasses.asdict(g)
    d["domain"] = g.domain.value
    d["indoor_range"] = list(g.indoor_range)
    d["outdoor_range"] = list(g.outdoor_range)
    return d


def _grpo_json(g: GrpoConfig) -> dict:
    d = dataclasses.asdict(g)
    d["std_mode"] = g.std_mode.value
    d["channels"] = list(g.channels)
    return d


def _strict(cls, d, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _reward(d, where: str) -> RewardConfig:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    try:
        return RewardConfig.from_json(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_json(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    kw = {}
    if "master_seed" in d:
        kw["master_seed"] = int(d["master_seed"])
    if "groups" in d:
        groups = tuple(_strict(GroupConfig, g, f"groups[{i}]") for i, g in enumerate(d["groups"]))
        domains = [g.domain for g in groups]
        if len(set(domains)) != len(domains):
            raise ConfigError("groups: each camera domain may appear once")
        kw["groups"] = groups
    if "pool" in d:
        kw["pool"] = str(d["pool"])
    if "rewards" in d:
        r = d["rewards"]
        if not isinstance(r, dict) or set(r) - {"perspective_like", "erp_like"}:
            raise ConfigError("rewards: expected keys 'perspective_like' and/or 'erp_like'")
        kw["rewards"] = RewardSchedule(
            _reward(r["perspective_like"], "rewards.perspective_like") if "perspective_like" in r else PERSPECTIVE_REWARDS,
            _reward(r["erp_like"], "rewards.erp_like") if "erp_like" in r else ERP_REWARDS,
        )
    if "grpo" in d:
        kw["grpo"] = _strict(GrpoConfig, d["grpo"], "grpo")
    if "router" in d:
        kw["router"] = _strict(RouterConfig, d["router"], "router")
    for key in ("max_turns", "max_subset"):
        if key in d:
            kw[key] = None if d[key] is None else int(d[key])
    if "hard_fraction" in d:
        kw["hard_fraction"] = float(d["hard_fraction"])
    if "sweep" in d:
        kw["sweep"] = tuple(_reward(r, f"sweep[{i}]") for i, r in enumerate(d["sweep"]))
    cfg = RunConfig(**kw)
    if cfg.max_turns < 2:
        raise ConfigError("max_turns must be at least 2")
    if not 0 < cfg.hard_fraction <= 1:
        raise ConfigError("hard_fraction must lie in (0, 1]")
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_json(data)


def domain_order(cfg: RunConfig) -> list[CameraDomain]:
    return [g.domain for g in cfg.groups]
