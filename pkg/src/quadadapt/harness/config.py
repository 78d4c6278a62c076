"""Run configuration: defaults, YAML overrides, hashing and object builders.

A config file is a YAML mapping whose sections mirror :data:`DEFAULTS`;
anything left out keeps its default. Unknown keys are rejected so typos do
not pass silently.
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from pathlib import Path

import yaml

from ..controllers import BASELINES
from ..learning.ppo import PpoConfig
from ..learning.reward import RewardWeights
from ..learning.train import Phase1Config, Phase2Config
from ..sim import SimConfig
from ..trajectory import TrajectoryRanges
from ..vehicle import ParamRanges

DEFAULTS = {
    "seed": 0,
    "sim": {
        "dt": 0.002,
        "latency": 0.005,
        "episode_max": 5.0,
        "height_loss_limit": 10.0,
        "body_rate_limit": 10.0,
    },
    # "training" / "testing" presets, or a mapping of overrides on top of a
    # preset ({"base": "testing", "mass": [0.3, 0.8]})
    "ranges": {"benchmark": "testing", "sweep": "training", "learning": "training"},
    "trajectory": {"benchmark": "testing", "learning": "training"},
    "feasibility": {"max_hover_margin": 0.9},
    "controllers": {"pid": {}, "l1": {}, "l1_high": {}, "geo": {}, "indi": {}},
    "simulate": {"controller": "pd_star", "delta": 0.5},
    "benchmark": {"episodes": 100, "controllers": list(BASELINES)},
    "sweep": {"episodes": 100, "deltas": [0.0, 0.5, 1.0, 2.0, 4.0, 8.0], "controllers": list(BASELINES), "c_floor": -0.15},
    "reward": {"smooth": 1.0, "survive": 1.0, "thrust": 1.0, "torque": 1.0, "rate_term": "torque"},
    "ppo": {f.name: f.default for f in dataclasses.fields(PpoConfig)},
    "phase1": {"total_steps": 2_000_000, "n_envs": 128, "delta": 0.1, "mode": "il_rl", "log_std_init": -1.0},
    "phase2": {
        "iterations": 12,
        "n_envs": 64,
        "rollout_steps": 1000,
        "sample_every": 4,
        "epochs": 2,
        "batch": 256,
        "lr": 1e-3,
        "dataset_max": 60_000,
        "val_envs": 32,
        "val_steps": 1000,
    },
    "policy": {"checkpoint": None, "mode": "student"},
    "eval_policy": {"episodes": 100, "delta": 0.1, "controllers": ["pd_star", "pd_n"], "payload_time": 2.0, "payload_mass_fraction": 0.3, "payload_offset": 0.3},
    "ablation": {"total_steps": 1_000_000, "variants": ["il_rl", "rl", "il", "e2e"], "deltas": [0.1, 0.5, 1.0], "episodes": 50},
}


class ConfigError(ValueError):
    pass


def deep_merge(base: dict, override: dict, path: str = "") -> dict:
    """Recursive merge; keys absent from ``base`` are errors except inside free-form sections."""
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        where = f"{path}.{key}" if path else key
        if key not in out:
            if path in _FREE_FORM:
                out[key] = copy.deepcopy(value)
                continue
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = deep_merge(out[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


_FREE_FORM = {"controllers.pid", "controllers.l1", "controllers.l1_high", "controllers.geo", "controllers.indi"}


def load_config(path=None, overrides: dict | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        data = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping")
        cfg = deep_merge(cfg, data)
    if overrides:
        cfg = deep_merge(cfg, overrides)
    return cfg


def config_hash(cfg: dict) -> str:
    """Short, stable digest of the resolved configuration."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def sim_config(cfg: dict) -> SimConfig:
    return SimConfig(**cfg["sim"])


def param_ranges(cfg: dict, use: str) -> ParamRanges:
    spec = cfg["ranges"][use]
    if isinstance(spec, str):
        if spec not in ("training", "testing"):
            raise ConfigError(f"unknown range preset {spec!r}")
        return ParamRanges.testing() if spec == "testing" else ParamRanges.training()
    spec = dict(spec)
    base = spec.pop("base", "training")
    merged = (ParamRanges.testing() if base == "testing" else ParamRanges.training()).to_dict()
    merged.update(spec)
    return ParamRanges.from_dict(merged)


def trajectory_ranges(cfg: dict, use: str) -> TrajectoryRanges:
    spec = cfg["trajectory"][use]
    if isinstance(spec, str):
        if spec not in ("training", "testing"):
            raise ConfigError(f"unknown trajectory preset {spec!r}")
        return TrajectoryRanges.testing() if spec == "testing" else TrajectoryRanges.training()
    return TrajectoryRanges(**{k: tuple(v) for k, v in spec.items()})


def phase1_config(cfg: dict, **changes) -> Phase1Config:
    p = dict(cfg["phase1"])
    p.update(changes)
    return Phase1Config(
        seed=cfg["seed"],
        ppo=PpoConfig(**cfg["ppo"]),
        weights=RewardWeights(**cfg["reward"]),
        **p,
    )


def phase2_config(cfg: dict, **changes) -> Phase2Config:
    p = dict(cfg["phase2"])
    p.update(changes)
    return Phase2Config(seed=cfg["seed"], delta=cfg["phase1"]["delta"], **p)
