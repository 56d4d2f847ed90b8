"""JSON experiment config: ``{"scenario": {...}, "train": {...}, "federation": {...}}``.

Every section is optional and falls back to defaults. Unknown keys are errors,
and all problems are collected before anything is raised.
"""
from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from .errors import ConfigError
from .federation import FederationConfig
from .scenarios import ScenarioConfig
from .tinygan import TrainConfig

SECTIONS = ("scenario", "train", "federation")
_NESTED = ("train", "scenario")


def _field_names(cls, exclude=()):
    return [f.name for f in dataclasses.fields(cls) if f.name not in exclude]


def _fill(cls, section: str, values, problems: list[str], exclude=()):
    if not isinstance(values, dict):
        problems.append(f"{section} must be a JSON object")
        return {}
    known = set(_field_names(cls, exclude))
    out = {}
    for key, value in values.items():
        if key not in known:
            problems.append(f"{section}.{key} is not a recognised option")
            continue
        default = next(f for f in dataclasses.fields(cls) if f.name == key)
        expected = default.type if isinstance(default.type, str) else getattr(default.type, "__name__", "")
        if expected.startswith("float") and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        elif expected.startswith("int") and isinstance(value, float) and value.is_integer():
            problems.append(f"{section}.{key} must be an integer, got {value!r}")
            continue
        if isinstance(value, bool) and not expected.startswith("bool"):
            problems.append(f"{section}.{key} must not be a boolean")
            continue
        out[key] = value
    return out


def config_from_dict(raw) -> FederationConfig:
    problems: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["config root must be a JSON object"])
    for key in raw:
        if key not in SECTIONS:
            problems.append(f"{key} is not a recognised section (expected {', '.join(SECTIONS)})")
    scen = _fill(ScenarioConfig, "scenario", raw.get("scenario", {}), problems)
    train = _fill(TrainConfig, "train", raw.get("train", {}), problems)
    fed = _fill(FederationConfig, "federation", raw.get("federation", {}), problems, exclude=_NESTED)
    try:
        cfg = FederationConfig(train=TrainConfig(**train), scenario=ScenarioConfig(**scen), **fed)
        problems.extend(_type_problems(cfg))
        if not problems:
            problems.extend(cfg.problems())
    except TypeError as exc:
        problems.append(str(exc))
    if problems:
        raise ConfigError(problems)
    return cfg


def _type_problems(cfg: FederationConfig) -> list[str]:
    out = []
    for section, obj in (("federation", cfg), ("train", cfg.train), ("scenario", cfg.scenario)):
        for f in dataclasses.fields(obj):
            if f.name in _NESTED and obj is cfg:
                continue
            v = getattr(obj, f.name)
            t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", "")
            ok = True
            if t == "int":
                ok = isinstance(v, int)
            elif t == "float":
                ok = isinstance(v, (int, float))
            elif t == "str":
                ok = isinstance(v, str)
            elif t.startswith("list"):
                ok = isinstance(v, list)
            if not ok:
                out.append(f"{section}.{f.name} has the wrong type ({type(v).__name__}, expected {t})")
    return out


def load_config(path) -> FederationConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config file not found: {path}"])
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: invalid JSON ({exc})"]) from exc
    return config_from_dict(raw)


def config_to_dict(cfg: FederationConfig) -> dict:
    d = dataclasses.asdict(cfg)
    return {"scenario": d.pop("scenario"), "train": d.pop("train"), "federation": d}


def with_seed(cfg: FederationConfig, seed: int) -> FederationConfig:
    """Same config with both the master seed and the scenario seed set to ``seed``."""
    return dataclasses.replace(cfg, master_seed=seed, scenario=dataclasses.replace(cfg.scenario, seed=seed))
