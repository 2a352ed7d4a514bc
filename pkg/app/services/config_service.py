"""Experiment configuration loading.

Precedence: command-line flag > ``SPIKETRACK_*`` environment > config file >
model defaults.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import yaml

from app.core.config import AppSettings, settings
from app.core.errors import ConfigError
from app.schemas.config_schema import ExperimentConfig


def read_config_file(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}", details=[{"path": str(path)}])
    try:
        text = path.read_text(encoding="utf-8")
        if path.suffix.lower() in {".yaml", ".yml"}:
            data = yaml.safe_load(text)
        elif path.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            raise ConfigError(
                "config must be .yaml, .yml or .json", details=[{"path": str(path)}]
            )
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping", details=[{"path": str(path)}])
    return data


def load_experiment_config(
    path: str | Path | None = None,
    *,
    seed: int | None = None,
    output_dir: str | None = None,
    method: str | None = None,
    env: AppSettings | None = None,
) -> ExperimentConfig:
    """Resolve the full configuration; raises pydantic ``ValidationError`` on
    schema violations."""
    env = env or settings
    data = read_config_file(path) if path is not None else {}

    env_overrides = {"seed": env.SEED, "workers": env.WORKERS, "output_dir": env.OUTPUT_DIR}
    for key, value in env_overrides.items():
        if value is not None:
            data[key] = value

    cli_overrides = {"seed": seed, "output_dir": output_dir, "method": method}
    for key, value in cli_overrides.items():
        if value is not None:
            data[key] = value
    return ExperimentConfig.model_validate(data)


def config_from_record(resolved: dict[str, Any]) -> ExperimentConfig:
    return ExperimentConfig.model_validate(resolved)
