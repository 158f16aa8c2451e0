"""key=value run configuration: file values override defaults, CLI flags
override file values; the resolved config is written into the run directory."""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .model import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


# CLI/file spellings that differ from the dataclass field names.
ALIASES = {
    "relation": "relation_filter",
    "comp_input": "comp_input_mode",
    "combine": "combine_mode",
}

DATA_KEYS = {
    "train_corpus": None,
    "train_frames": None,
    "val_corpus": None,
    "val_frames": None,
    "frame_graph": None,
    "max_events": 5,
    "lexical_cap": 40_000,
    "frame_cap": 500,
}


def _field_defaults(cls) -> dict[str, object]:
    return {f.name: f.default for f in dataclasses.fields(cls)}


def default_config() -> dict[str, object]:
    resolved: dict[str, object] = {}
    resolved.update(_field_defaults(ModelConfig))
    resolved.update(_field_defaults(TrainConfig))
    resolved.update(DATA_KEYS)
    return resolved


def coerce(key: str, raw: str, default: object):
    if default is None:
        return raw  # path-like keys stay strings
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, int) and not isinstance(default, bool):
        try:
            return int(raw)
        except ValueError as e:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from e
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError as e:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from e
    return raw


def parse_config_file(path) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def resolve_config(
    config_path: str | None, overrides: dict[str, str]
) -> dict[str, object]:
    """defaults <- config file <- flag overrides, with type coercion."""
    defaults = default_config()
    resolved = dict(defaults)

    def apply(key: str, raw: str, source: str):
        canon = ALIASES.get(key, key)
        if canon not in resolved:
            raise ConfigError(f"unknown configuration key {key!r} ({source})")
        resolved[canon] = coerce(canon, raw, defaults[canon])

    if config_path is not None:
        for key, raw in parse_config_file(config_path).items():
            apply(key, raw, f"config file {config_path}")
    for key, raw in overrides.items():
        apply(key, raw, "command line")
    return resolved


def split_configs(resolved: dict[str, object]) -> tuple[ModelConfig, TrainConfig]:
    mkeys = {f.name for f in dataclasses.fields(ModelConfig)}
    tkeys = {f.name for f in dataclasses.fields(TrainConfig)}
    mcfg = ModelConfig(**{k: v for k, v in resolved.items() if k in mkeys})
    tcfg = TrainConfig(**{k: v for k, v in resolved.items() if k in tkeys})
    return mcfg, tcfg


def write_resolved(resolved: dict[str, object], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(resolved):
            value = resolved[key]
            if value is None:
                continue
            fh.write(f"{key}={value}\n")


def parse_override_args(args: list[str]) -> dict[str, str]:
    """Generic trailing `--key value` pairs (underscores or hyphens)."""
    overrides: dict[str, str] = {}
    i = 0
    while i < len(args):
        token = args[i]
        if not token.startswith("--"):
            raise ConfigError(f"unexpected argument {token!r}")
        key = token[2:].replace("-", "_")
        if "=" in key:
            key, _, value = key.partition("=")
            overrides[key] = value
            i += 1
            continue
        if i + 1 >= len(args):
            raise ConfigError(f"flag {token!r} needs a value")
        overrides[key] = args[i + 1]
        i += 2
    return overrides
