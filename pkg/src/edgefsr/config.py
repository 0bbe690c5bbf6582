"""TOML config files mapped onto :class:`RunConfig`.

Sections are ``[train]`` (with ``[train.canny]`` and ``[train.dog]``),
``[loss]``, ``[network]`` and ``[data]``; keys are the dataclass field names.
Unset keys keep their defaults, unknown keys are an error.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any, Mapping, Optional

import tomli
import tomli_w

from .core import CannyParams, DataConfig, DoGParams, LossWeights, NetConfig, RunConfig, TrainConfig
from .errors import ConfigError, FSRError

_SECTIONS = {"train": TrainConfig, "loss": LossWeights, "network": NetConfig, "data": DataConfig}
_NESTED = {"canny": CannyParams, "dog": DoGParams}


def _coerce(cls, name: str, key: str, value: Any, default: Any):
    where = f"{name}.{key}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string, got {value!r}")
        return value
    raise ConfigError(f"unsupported field type for {where}")


def _build(cls, name: str, table: Mapping[str, Any]):
    if not isinstance(table, Mapping):
        raise ConfigError(f"[{name}] must be a table")
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(table) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    kwargs = {}
    for key, value in table.items():
        default = getattr(defaults, key)
        if key in _NESTED and cls is TrainConfig:
            kwargs[key] = _build(_NESTED[key], f"{name}.{key}", value)
        else:
            kwargs[key] = _coerce(cls, name, key, value, default)
    try:
        return cls(**kwargs)
    except FSRError as e:
        raise ConfigError(str(e)) from e


def config_from_dict(doc: Mapping[str, Any]) -> RunConfig:
    unknown = sorted(set(doc) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    parts = {name: _build(cls, name, doc.get(name, {})) for name, cls in _SECTIONS.items()}
    try:
        return RunConfig(**parts)
    except FSRError as e:
        raise ConfigError(str(e)) from e


def load_config(path: Optional[str] = None) -> RunConfig:
    """Parse a TOML config; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        doc = tomli.loads(p.read_text())
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"cannot parse {p}: {e}") from e
    return config_from_dict(doc)


def config_to_dict(cfg: RunConfig) -> dict:
    return {name: dataclasses.asdict(getattr(cfg, name)) for name in _SECTIONS}


def dump_config(cfg: RunConfig) -> str:
    """Fully resolved config as TOML; :func:`load_config` reads it back unchanged."""
    return tomli_w.dumps(config_to_dict(cfg))
