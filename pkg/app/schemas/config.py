"""
Experiment configuration schemas
File: app/schemas/config.py

Every model forbids unknown keys so typos in a YAML config are rejected
instead of silently ignored.
"""

from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import List, Literal, Optional
from enum import Enum
import math


CONFIG_FORMAT_VERSION = 1


class Method(str, Enum):
    TOPIC = "topic"
    TSP_ONLY = "tsp_only"
    NAIVE = "naive"
    REPLAY = "replay"
    REGULARIZATION = "regularization"


class ProjectionMode(str, Enum):
    IDENTITY = "identity"
    LINEAR = "linear"
    MLP = "mlp"
    AVERAGE_POOLING = "average_pooling"


class Sweep(str, Enum):
    PROMPTS = "prompts"
    LAMBDA = "lambda"
    PROJECTION = "projection"
    BASE_TASKS = "base-tasks"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# Model dimensions
class ModelConfig(_Strict):
    width: int = Field(default=32, ge=1, description="Token width C")
    layers: int = Field(default=2, ge=1, description="Transformer layers L")
    heads: int = Field(default=2, ge=1, description="Attention heads h")
    prompts: int = Field(default=5, ge=0, description="Task-specific prompt count n")
    max_tokens: int = Field(default=8, ge=1, description="Instruction length m")
    ff_mult: int = Field(default=2, ge=1)
    patch: int = Field(default=4, ge=1)
    projection: ProjectionMode = ProjectionMode.AVERAGE_POOLING
    prompt_init_std: float = Field(default=0.02, gt=0)
    ln_eps: float = Field(default=1e-5, gt=0)

    @model_validator(mode="after")
    def check_heads(self):
        if self.width % self.heads != 0:
            raise ValueError(f"width {self.width} is not divisible by heads {self.heads}")
        return self


# Environment geometry
class EnvConfig(_Strict):
    grid: int = Field(default=12, ge=6, description="Table extent G")
    view_size: int = Field(default=16, ge=1, description="View side V")
    max_keyframes: int = Field(default=6, ge=1, description="Expert keyframe budget")

    @model_validator(mode="after")
    def check_view(self):
        if self.view_size < self.grid:
            raise ValueError(f"view_size {self.view_size} must be at least grid {self.grid}")
        return self


class StageConfig(_Strict):
    epochs: int = Field(..., ge=0)
    lr: float = Field(..., ge=0)
    batch_size: int = Field(default=16, ge=1)


class CESConfig(_Strict):
    lambda1: float = Field(default=0.2, ge=0)
    lambda2: float = Field(default=0.8, ge=0)
    include_base_nodes: bool = True


class TrainConfig(_Strict):
    method: Method = Method.TOPIC
    seed: int = Field(default=0, ge=0)
    optimizer: Literal["adam", "sgd"] = "adam"
    stage1: StageConfig = Field(default_factory=lambda: StageConfig(epochs=60, lr=1e-3))
    stage2: StageConfig = Field(default_factory=lambda: StageConfig(epochs=10, lr=1e-3))
    # epochs for q=1; general q uses ceil(epochs / q) so gradient steps stay comparable
    stage3: StageConfig = Field(default_factory=lambda: StageConfig(epochs=100, lr=5e-3, batch_size=8))
    regularization_mu: float = Field(default=1.0, ge=0)
    eval_horizon: int = Field(default=8, ge=1)
    show_progress: bool = False
    model: ModelConfig = Field(default_factory=ModelConfig)
    ces: CESConfig = Field(default_factory=CESConfig)

    def few_shot_epochs(self, shots: int) -> int:
        return max(1, math.ceil(self.stage3.epochs / max(shots, 1)))


class SessionSchedule(_Strict):
    base_task_ids: Optional[List[str]] = Field(None, description="Defaults to the catalog's base tasks")
    base_task_count: Optional[int] = Field(None, ge=0, description="Keep only the first N base tasks")
    incremental_sessions: Optional[List[List[str]]] = Field(
        None, description="Defaults to the catalog's incremental tasks, tasks_per_session each"
    )
    tasks_per_session: int = Field(default=1, ge=1)
    shots: int = Field(default=1, ge=1, description="q demonstrations per new task")
    base_demos: int = Field(default=100, ge=1)
    eval_episodes: int = Field(default=25, ge=1)
    base_seed_start: int = Field(default=0, ge=0)
    incremental_seed_start: int = Field(default=100_000, ge=0)
    eval_seed_start: int = Field(default=1_000_000, ge=0)

    @model_validator(mode="after")
    def check_seed_ranges(self):
        if not (self.base_seed_start + self.base_demos <= self.incremental_seed_start < self.eval_seed_start):
            raise ValueError("seed ranges for base, incremental and evaluation episodes must be disjoint and ordered")
        return self


class ExperimentConfig(_Strict):
    format_version: int = CONFIG_FORMAT_VERSION
    data_dir: str = "data"
    output_dir: str = "runs"
    catalog: Optional[str] = Field(None, description="Task catalog YAML; built-in catalog when omitted")
    env: EnvConfig = Field(default_factory=EnvConfig)
    schedule: SessionSchedule = Field(default_factory=SessionSchedule)
    train: TrainConfig = Field(default_factory=TrainConfig)

    @model_validator(mode="after")
    def check_version(self):
        if self.format_version != CONFIG_FORMAT_VERSION:
            raise ValueError(f"unsupported config format_version {self.format_version}")
        if self.env.view_size % self.train.model.patch != 0:
            raise ValueError(f"view_size {self.env.view_size} is not divisible by patch {self.train.model.patch}")
        return self
