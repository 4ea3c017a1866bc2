"""Flat key=value experiment configuration with dotted section prefixes.

Example file:

    env=riskworld
    seeds=0,1,2,3,4
    collect.steps=10000
    models.epochs=100
    rollout.k=20
    rollout.fwd_horizon=3
    learner.steps=100000
    eta=0.7
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .augment import STRATEGIES, RolloutConfig
from .learner import LearnerConfig


@dataclass
class ModelTrainingConfig:
    epochs: int = 100
    cvae_epochs: int = 50
    batch_size: int = 256
    lr: float = 1e-3
    cvae_lr: float = 1e-3
    cvae_kl_weight: float = 0.05
    holdout: int = 1000
    normalize_inputs: bool = True


@dataclass
class ExperimentConfig:
    env: str = "riskworld"
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    out_dir: str = "runs"
    collect_steps: int = 10_000
    strategy: str = "cabi"
    eta: float = 0.7
    eval_episodes: int = 20
    models: ModelTrainingConfig = field(default_factory=ModelTrainingConfig)
    rollout: RolloutConfig = field(default_factory=RolloutConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")


def _coerce(value: str, target):
    if isinstance(target, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"cannot parse boolean from {value!r}")
    if isinstance(target, int):
        return int(value)
    if isinstance(target, float):
        return float(value)
    if isinstance(target, (list, tuple)):
        items = [v.strip() for v in value.split(",") if v.strip()]
        return type(target)(int(v) for v in items)
    return value


_SECTIONS = {
    "collect.steps": ("collect_steps",),
    "eval.episodes": ("eval_episodes",),
}


def _resolve(cfg: ExperimentConfig, key: str):
    """Map a dotted key to (object, attribute)."""
    if key in _SECTIONS:
        return cfg, _SECTIONS[key][0]
    if "." in key:
        section, attr = key.split(".", 1)
        sub = getattr(cfg, section, None)
        if sub is None or not hasattr(sub, attr):
            raise KeyError(f"unknown config key {key!r}")
        return sub, attr
    if not hasattr(cfg, key):
        raise KeyError(f"unknown config key {key!r}")
    return cfg, key


def apply_entries(cfg: ExperimentConfig, entries) -> ExperimentConfig:
    for key, value in entries:
        obj, attr = _resolve(cfg, key)
        current = getattr(obj, attr)
        setattr(obj, attr, _coerce(value, current))
    return cfg


def parse_entries(text: str):
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        entries.append((key.strip(), value.strip()))
    return entries


def load_config(path: str, overrides=()) -> ExperimentConfig:
    cfg = ExperimentConfig()
    with open(path) as f:
        apply_entries(cfg, parse_entries(f.read()))
    apply_entries(cfg, overrides)
    return cfg


def config_dict(cfg) -> dict:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if hasattr(v, "__dataclass_fields__"):
            out[f.name] = config_dict(v)
        elif isinstance(v, tuple):
            out[f.name] = list(v)
        else:
            out[f.name] = v
    return out
