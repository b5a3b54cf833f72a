"""Run configuration: one JSON file with task/model/train/beam/preset sections.

Values are resolved in this order, later winning: dataclass defaults, the
JSON file, ``TINYTRANSDUCER_SEED`` (applied to every ``seed`` field), then
dotted command-line overrides such as ``train.lr=5e-4``.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..decoding import BeamConfig
from ..model import ModelConfig
from .presets import PresetSettings
from .tasks import TaskConfig
from .training import TrainConfig

SEED_ENV = "TINYTRANSDUCER_SEED"
SECTIONS = ("task", "model", "train", "beam", "preset")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    task: TaskConfig = field(default_factory=TaskConfig)
    model: dict = field(default_factory=dict)   # ModelConfig overrides; vocab/frame dims come from the task
    train: TrainConfig = field(default_factory=TrainConfig)
    beam: BeamConfig = field(default_factory=BeamConfig)
    preset: dict = field(default_factory=dict)

    def model_config(self) -> ModelConfig:
        base = {"vocab_size": self.task.vocab_size, "input_feature_dim": self.task.frame_dim}
        base.update(self.model)
        return ModelConfig.from_dict(base)

    def preset_settings(self) -> PresetSettings:
        kw = dict(self.preset)
        if "schedule_window" in kw:
            kw["schedule_window"] = tuple(kw["schedule_window"])
        if "channel_rates" in kw:
            kw["channel_rates"] = tuple(kw["channel_rates"])
        if "offline_beam" in kw:
            kw["offline_beam"] = BeamConfig(**kw["offline_beam"])
        return PresetSettings(model=self.model_config() if self.model else None, **kw)

    def to_dict(self) -> dict:
        return {
            "task": self.task.to_dict(),
            "model": dict(self.model),
            "train": self.train.to_dict(),
            "beam": asdict(self.beam),
            "preset": dict(self.preset),
        }


def parse_value(text: str):
    """JSON literal if it parses, else the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(raw: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form section.key=value")
    key, value = item.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) < 2 or parts[0] not in SECTIONS:
        raise ConfigError(f"override key {key!r} must start with one of {SECTIONS}")
    node = raw.setdefault(parts[0], {})
    for p in parts[1:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = parse_value(value)


def _check_keys(section: str, values: dict, cls) -> None:
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown {section} keys: {sorted(unknown)}")


def load_config(path=None, overrides=(), env=None) -> RunConfig:
    env = os.environ if env is None else env
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        bad = set(raw) - set(SECTIONS)
        if bad:
            raise ConfigError(f"{path}: unknown sections {sorted(bad)}")
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
        for sec in ("task", "model", "train"):
            raw.setdefault(sec, {})["seed"] = seed
    for item in overrides:
        apply_override(raw, item)

    _check_keys("task", raw.get("task", {}), TaskConfig)
    _check_keys("model", raw.get("model", {}), ModelConfig)
    _check_keys("train", raw.get("train", {}), TrainConfig)
    _check_keys("beam", raw.get("beam", {}), BeamConfig)
    _check_keys("preset", {k: v for k, v in raw.get("preset", {}).items() if k != "model"}, PresetSettings)
    try:
        cfg = RunConfig(
            task=TaskConfig(**raw.get("task", {})),
            model=dict(raw.get("model", {})),
            train=TrainConfig(**raw.get("train", {})),
            beam=BeamConfig(**raw.get("beam", {})),
            preset=dict(raw.get("preset", {})),
        )
        cfg.model_config()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg
