"""
Shared fixtures: environment, catalog, a tiny policy and a tiny experiment config
"""

from pathlib import Path

import numpy as np
import pytest

from app.schemas.config import EnvConfig, ExperimentConfig, ModelConfig
from app.services.catalog_service import DEFAULT_CATALOG, VOCABULARY, resolve_schedule
from app.services.demo_service import DemoService
from app.services.env_service import GridTableEnv
from app.services.policy_service import init_policy


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def env():
    return GridTableEnv(EnvConfig())


@pytest.fixture
def catalog():
    return list(DEFAULT_CATALOG)


@pytest.fixture
def task_by_id(catalog):
    return {t.task_id: t for t in catalog}


@pytest.fixture
def small_model():
    return ModelConfig(width=8, layers=1, heads=2, prompts=2, max_tokens=8, ff_mult=2, patch=4)


@pytest.fixture
def small_env():
    return GridTableEnv(EnvConfig(grid=6, view_size=8, max_keyframes=6))


@pytest.fixture
def small_policy(small_model, small_env):
    """(policy, base prompts, W_base) on the 6×6 table"""
    return init_policy(small_model, small_env.grid, small_env.view_size, len(VOCABULARY), seed=0)


def tiny_config(tmp_path: Path, method: str = "topic", **train) -> ExperimentConfig:
    """Two base tasks, two one-task sessions, one-epoch stages"""
    raw = {
        "data_dir": str(tmp_path / "data"),
        "output_dir": str(tmp_path / "runs"),
        "env": {"grid": 6, "view_size": 8, "max_keyframes": 6},
        "schedule": {
            "base_task_ids": ["reach_red_cube", "press_red_button"],
            "incremental_sessions": [["press_blue_button"], ["close_green_drawer"]],
            "shots": 1,
            "base_demos": 2,
            "eval_episodes": 2,
        },
        "train": {
            "method": method,
            "seed": 0,
            "stage1": {"epochs": 1, "lr": 0.001, "batch_size": 4},
            "stage2": {"epochs": 1, "lr": 0.001, "batch_size": 4},
            "stage3": {"epochs": 2, "lr": 0.001, "batch_size": 4},
            "eval_horizon": 4,
            "model": {"width": 8, "layers": 1, "heads": 2, "prompts": 2, "max_tokens": 8, "patch": 4},
            **train,
        },
    }
    return ExperimentConfig.model_validate(raw)


@pytest.fixture
def tiny_experiment(tmp_path, catalog):
    """Tiny config with its demonstration set already generated"""
    config = tiny_config(tmp_path)
    base, sessions = resolve_schedule(catalog, config.schedule)
    DemoService.generate_dataset(
        config, base, [t for group in sessions for t in group], catalog, config.data_dir
    )
    return config
