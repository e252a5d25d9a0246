"""Flat ``key=value`` run configuration shared by the CLI subcommands."""
from __future__ import annotations

from dataclasses import fields
from pathlib import Path

from .model import ModelConfig
from .trainer import ConfigError, TrainConfig

# keys that are not model/training hyper-parameters
PATH_KEYS = {"data", "checkpoint", "log", "test_dir"}


def parse_config(path: str | Path) -> dict[str, str]:
    out: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        out[key] = value
    return out


def _convert(kind, key: str, value):
    if not isinstance(value, str):
        return value
    name = kind if isinstance(kind, str) else kind.__name__
    try:
        if name == "bool":
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if name == "int":
            return int(value)
        if name == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {value!r} as {name}") from None
    return value


def build_configs(values: dict) -> tuple[ModelConfig, TrainConfig, dict[str, str]]:
    """Split a flat mapping into model config, train config and paths.

    Unknown keys are rejected so that typos do not silently fall back to
    defaults.
    """
    model_fields = {f.name: f.type for f in fields(ModelConfig)}
    train_fields = {f.name: f.type for f in fields(TrainConfig)}
    unknown = sorted(set(values) - set(model_fields) - set(train_fields) - PATH_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    m = {k: _convert(model_fields[k], k, v) for k, v in values.items() if k in model_fields}
    t = {k: _convert(train_fields[k], k, v) for k, v in values.items() if k in train_fields}
    paths = {k: str(v) for k, v in values.items() if k in PATH_KEYS}
    try:
        return ModelConfig(**m), TrainConfig(**t), paths
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def echo(model_cfg: ModelConfig, train_cfg: TrainConfig, paths: dict[str, str]) -> str:
    lines = [f"{k}={v}" for k, v in model_cfg.to_dict().items()]
    lines += [f"{k}={v}" for k, v in train_cfg.to_dict().items()]
    lines += [f"{k}={paths[k]}" for k in sorted(paths)]
    return "\n".join(lines) + "\n"
