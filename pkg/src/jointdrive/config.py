"""Run configuration: one JSON file of parameter blocks plus dotted flag overrides.

Every field has a default and unknown keys are rejected, so a run is fully
described by the resolved config and its hash.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import fields
from pathlib import Path

from .control.controller import ControllerConfig
from .model.attention import ConfigError
from .model.interaction import ModelConfig
from .sim.scenarios import GENERATORS, KINDS
from .training.trainer import TrainConfig


_MODEL_OWNED = ("horizon", "dt_wp")  # set from the data block so labels and decoders agree
_TRAIN_OWNED = ("horizon", "dt_wp", "seed", "variant", "model", "local_layers", "global_layers", "local_heads",
                "global_heads")


def _dataclass_defaults(cls, skip=()) -> dict:
    probe = cls()
    return {f.name: copy.deepcopy(getattr(probe, f.name)) for f in fields(cls) if f.name not in skip}


DEFAULTS = {
    "seed": 0,
    "data": {"scenarios": 30, "per_scenario": 10, "every": 20, "horizon": 10, "dt_wp": 0.5,
             "kinds": list(KINDS), "compress": False, "held_out": 0.2},
    "model": _dataclass_defaults(ModelConfig, _MODEL_OWNED),
    "train": _dataclass_defaults(TrainConfig, _TRAIN_OWNED),
    "controller": _dataclass_defaults(ControllerConfig, ("dt_wp",)),
    "eval": {"episodes": 6, "repeats": 3, "kinds": list(KINDS), "seed_offset": 1000, "max_time": None,
             "agent": "model"},
}
for key in ("lateral", "longitudinal"):
    DEFAULTS["controller"][key] = list(DEFAULTS["controller"][key])


def _check_keys(block: str, given: dict, allowed: dict) -> None:
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {block!r}: {', '.join(unknown)}")


def _coerce(value):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def parse_override(text: str) -> tuple[list[str], object]:
    """'train.lr=0.001' -> (['train', 'lr'], 0.001); values parse as JSON when they can."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form block.key=value")
    path, value = text.split("=", 1)
    keys = path.strip().split(".")
    if not all(keys):
        raise ConfigError(f"override {text!r} has an empty key")
    return keys, _coerce(value)


class RunConfig:
    """Resolved configuration; ``blocks`` mirrors DEFAULTS with user values merged in."""

    def __init__(self, blocks: dict):
        self.blocks = blocks
        self.validate()

    # ------------------------------------------------------------- building
    @classmethod
    def from_sources(cls, path=None, overrides=()) -> "RunConfig":
        user = {}
        if path is not None:
            try:
                user = json.loads(Path(path).read_text())
            except FileNotFoundError:
                raise ConfigError(f"config file {path} not found") from None
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {path} is not valid JSON ({exc})") from None
            if not isinstance(user, dict):
                raise ConfigError("config file must hold a JSON object")
        blocks = copy.deepcopy(DEFAULTS)
        _check_keys("config", user, blocks)
        for name, value in user.items():
            if isinstance(blocks[name], dict):
                if not isinstance(value, dict):
                    raise ConfigError(f"block {name!r} must be an object")
                _check_keys(name, value, blocks[name])
                blocks[name].update(value)
            else:
                blocks[name] = value
        for text in overrides:
            keys, value = parse_override(text)
            target = blocks
            for k in keys[:-1]:
                if not isinstance(target.get(k), dict):
                    raise ConfigError(f"unknown config block {'.'.join(keys[:-1])!r}")
                target = target[k]
            if keys[-1] not in target:
                raise ConfigError(f"unknown config key {'.'.join(keys)!r}")
            target[keys[-1]] = value
        rc = cls(blocks)
        rc.user_model = "model" in user or any(t.startswith("model.") for t in overrides)
        return rc

    def validate(self) -> None:
        b = self.blocks
        if not isinstance(b["seed"], int) or b["seed"] < 0:
            raise ConfigError("seed must be a non-negative integer")
        d = b["data"]
        for k in ("scenarios", "per_scenario", "every", "horizon"):
            if not isinstance(d[k], int) or d[k] < 0:
                raise ConfigError(f"data.{k} must be a non-negative integer")
        bad = sorted(set(d["kinds"]) - set(GENERATORS))
        if bad or not d["kinds"]:
            raise ConfigError(f"data.kinds has unknown scenario kinds {bad}")
        if not 0.0 <= float(d["held_out"]) < 1.0:
            raise ConfigError("data.held_out is a fraction in [0, 1)")
        e = b["eval"]
        if e["agent"] not in ("model", "route"):
            raise ConfigError("eval.agent is 'model' or 'route'")
        if not isinstance(e["repeats"], int) or e["repeats"] < 1 or not isinstance(e["episodes"], int) \
                or e["episodes"] < 1:
            raise ConfigError("eval.repeats and eval.episodes must be positive integers")
        bad = sorted(set(e["kinds"]) - set(GENERATORS))
        if bad or not e["kinds"]:
            raise ConfigError(f"eval.kinds has unknown scenario kinds {bad}")
        try:
            self.model_config()
            self.controller_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    # ------------------------------------------------------------- products
    def model_config(self) -> ModelConfig:
        return self.train_config().model_config()

    def train_config(self) -> TrainConfig:
        b = self.blocks
        model = dict(b["model"])
        variant = model.pop("variant")
        return TrainConfig(**b["train"], horizon=b["data"]["horizon"], dt_wp=b["data"]["dt_wp"],
                           seed=b["seed"], variant=variant, model=model)

    def controller_config(self) -> ControllerConfig:
        c = dict(self.blocks["controller"])
        c["dt_wp"] = self.blocks["data"]["dt_wp"]
        return ControllerConfig.from_dict(c)

    @property
    def seed(self) -> int:
        return self.blocks["seed"]

    def to_dict(self) -> dict:
        return copy.deepcopy(self.blocks)

    def digest(self) -> str:
        """sha256 of the canonical JSON form; reports carry it."""
        return hashlib.sha256(json.dumps(self.blocks, sort_keys=True).encode()).hexdigest()
