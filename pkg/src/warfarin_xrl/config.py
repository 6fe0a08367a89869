"""Experiment configuration: one INI file, every key required, typed, hashable."""

from __future__ import annotations

import configparser
import hashlib
import json
from pathlib import Path
from typing import Sequence

from .env import EnvConfig
from .errors import ConfigError
from .mdp import ActionSpace, RewardConfig
from .ppo import ForgingConfig, PpoConfig


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.split(","))


def _ints(text: str) -> tuple:
    return tuple(int(x) for x in text.split(","))


def _optional_float(text: str):
    return None if text.strip().lower() == "none" else float(text)


SCHEMA = {
    "experiment": {"seed": int, "workers": int},
    "cohort": {"test_size": int, "test_id_offset": int, "fresh_id_offset": int},
    "env": {"horizon": int, "initial_days": int, "interval": int, "noise": _bool, "step_hours": float},
    "reward": {"mid_inr": float, "normalization": float, "amplifier": float, "clip_low": _optional_float},
    "actions": {"percent_changes": _floats, "duration": int},
    "ppo": {"clip_ratio": float, "gamma": float, "gae_lambda": float, "target_kl": float,
            "entropy_coef": float, "actor_iters": int, "critic_iters": int, "patients_per_pass": int,
            "warmup_patients": int, "patience": int, "max_passes": int, "actor_lr": float,
            "critic_lr": float, "lr_decay": float, "lr_step": int, "hidden": _ints,
            "validation_patients": int, "rebalance": _bool, "min_variant_prob": float},
    "forging": {"regularizer_coef": float, "wavelet_enabled": _bool, "u": float, "d": float, "r": float,
                "c1": float, "c2": float},
    "distill": {"max_depth": int, "min_leaf": int, "equivalence_points": int},
}


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    return cp


def parse_overrides(items: Sequence[str]) -> dict:
    """``section.key=value`` strings to ``{(section, key): value}``."""
    out = {}
    for item in items:
        lhs, eq, value = item.partition("=")
        section, dot, key = lhs.strip().partition(".")
        if not eq or not dot:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        out[section, key] = value.strip()
    return out


def load_config(path: str | Path, overrides: Sequence[str] = ()) -> dict:
    cp = _parser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    raw = {s: dict(cp[s]) for s in cp.sections()}
    for (section, key), value in parse_overrides(overrides).items():
        raw.setdefault(section, {})[key] = value
    return resolve(raw)


def resolve(raw: dict) -> dict:
    unknown = set(raw) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    cfg = {}
    for section, keys in SCHEMA.items():
        values = raw.get(section, {})
        extra = set(values) - set(keys)
        if extra:
            raise ConfigError(f"unknown key(s) in [{section}]: {sorted(extra)}")
        cfg[section] = {}
        for key, conv in keys.items():
            if key not in values:
                raise ConfigError(f"missing config key [{section}] {key}")
            try:
                cfg[section][key] = conv(values[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for [{section}] {key}: {values[key]!r} ({exc})") from exc
    return cfg


def config_hash(cfg: dict) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def dump_config(cfg: dict) -> str:
    """INI text that loads back to ``cfg``."""
    lines = []
    for section, values in cfg.items():
        lines.append(f"[{section}]")
        for key, value in values.items():
            if isinstance(value, tuple):
                value = ", ".join(repr(v) for v in value)
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


# ---- typed views ----------------------------------------------------------------

def env_config(cfg: dict) -> EnvConfig:
    return EnvConfig(seed=cfg["experiment"]["seed"], **cfg["env"])


def reward_config(cfg: dict) -> RewardConfig:
    return RewardConfig(**cfg["reward"])


def action_space(cfg: dict) -> ActionSpace:
    return ActionSpace(**cfg["actions"])


def ppo_config(cfg: dict) -> PpoConfig:
    return PpoConfig(**cfg["ppo"])


def forging_config(cfg: dict) -> ForgingConfig:
    return ForgingConfig(**cfg["forging"])
