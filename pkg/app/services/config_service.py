"""
Experiment config loading, overrides and hashing
File: app/services/config_service.py
"""

from pathlib import Path
from typing import Any, List, Optional, Union
import hashlib
import json
import logging

import yaml
from pydantic import ValidationError

from app.core.config import settings
from app.core.exceptions import ConfigError
from app.schemas.config import ExperimentConfig, Method
from app.schemas.task import TaskSpec

logger = logging.getLogger(__name__)


RESOLVED_CONFIG_FILENAME = "resolved_config.yaml"


def stable_hash(payload: Any) -> str:
    """Short sha256 of a canonical JSON dump"""
    text = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


class ConfigService:

    @staticmethod
    def load(path: Optional[Union[str, Path]] = None) -> ExperimentConfig:
        path = Path(path or settings.FSAIL_DEFAULT_CONFIG)
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: invalid YAML ({e})")
        return ConfigService.validate(raw, source=str(path))

    @staticmethod
    def validate(raw: dict, source: str = "config") -> ExperimentConfig:
        try:
            return ExperimentConfig.model_validate(raw)
        except ValidationError as e:
            errors = "; ".join(
                f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()
            )
            raise ConfigError(f"{source}: {errors}")

    @staticmethod
    def with_overrides(
        config: ExperimentConfig,
        method: Optional[Union[str, Method]] = None,
        seed: Optional[int] = None,
        shots: Optional[int] = None,
        **train_overrides,
    ) -> ExperimentConfig:
        """Copy of ``config`` with CLI overrides applied; validators run again"""
        raw = config.model_dump(mode="json")
        if method is not None:
            raw["train"]["method"] = Method(method).value
        if seed is not None:
            raw["train"]["seed"] = seed
        if shots is not None:
            raw["schedule"]["shots"] = shots
        for key, value in train_overrides.items():
            ConfigService.set_path(raw, key, value)
        return ConfigService.validate(raw, source="overrides")

    @staticmethod
    def set_path(raw: dict, dotted: str, value: Any) -> None:
        node = raw
        parts = dotted.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"Unknown config key '{dotted}'")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"Unknown config key '{dotted}'")
        node[parts[-1]] = value

    @staticmethod
    def dump(config: ExperimentConfig) -> str:
        return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False)

    @staticmethod
    def write_resolved(run_dir: Union[str, Path], config: ExperimentConfig) -> Path:
        path = Path(run_dir) / RESOLVED_CONFIG_FILENAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(ConfigService.dump(config))
        return path

    @staticmethod
    def read_resolved(run_dir: Union[str, Path]) -> Optional[str]:
        path = Path(run_dir) / RESOLVED_CONFIG_FILENAME
        return path.read_text() if path.exists() else None

    # ==================== HASHES ====================

    @staticmethod
    def config_hash(config: ExperimentConfig) -> str:
        return stable_hash(config.model_dump(mode="json"))

    @staticmethod
    def schedule_hash(config: ExperimentConfig, base: List[TaskSpec], sessions: List[List[TaskSpec]]) -> str:
        """Runs are comparable only when this matches"""
        schedule = config.schedule
        return stable_hash({
            "base": [t.task_id for t in base],
            "sessions": [[t.task_id for t in group] for group in sessions],
            "shots": schedule.shots,
            "eval_episodes": schedule.eval_episodes,
            "eval_seed_start": schedule.eval_seed_start,
            "horizon": config.train.eval_horizon,
        })
