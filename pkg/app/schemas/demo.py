from pydantic import BaseModel, ConfigDict, Field, field_validator
from typing import Dict, List, Optional, Tuple
import numpy as np

from app.schemas.task import KeyframeAction, SessionTag, TaskSpec, WorldState


DEMO_FORMAT_VERSION = 1

ActionTuple = Tuple[int, int, int, int, int]


# Rendered views + instruction; never serialized (regenerated by replay)
class Observation(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    views: np.ndarray = Field(..., description="(3, V, V, channels) top/front/side planes")
    instruction_tokens: List[int]

    @field_validator("views")
    @classmethod
    def check_views(cls, v: np.ndarray):
        if v.ndim != 4 or v.shape[0] != 3 or v.shape[1] != v.shape[2]:
            raise ValueError(f"views must be (3, V, V, C), got {v.shape}")
        return v


class DemoStep(BaseModel):
    model_config = ConfigDict(frozen=True)

    observation: Observation
    action: KeyframeAction


class Demonstration(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    task_id: str
    seed: int
    instruction_tokens: List[int]
    steps: List[DemoStep] = Field(default_factory=list)
    final_state: Optional[WorldState] = None

    @property
    def demo_id(self) -> str:
        return f"{self.task_id}#{self.seed}"

    def to_record(self) -> "DemoRecord":
        return DemoRecord(
            task_id=self.task_id,
            seed=self.seed,
            instruction_tokens=list(self.instruction_tokens),
            actions=[s.action.to_tuple() for s in self.steps],
        )


# One line of a demos/<tag>/<task_id>.jsonl file
class DemoRecord(BaseModel):
    task_id: str
    seed: int
    instruction_tokens: List[int]
    actions: List[ActionTuple]


class DemoFileEntry(BaseModel):
    path: str
    session_tag: SessionTag
    count: int = Field(..., ge=0)
    seed_start: int


class DemoManifest(BaseModel):
    format_version: int = DEMO_FORMAT_VERSION
    grid: int
    view_size: int
    max_tokens: int
    vocabulary: List[str]
    catalog: List[TaskSpec]
    base_seed_start: int
    incremental_seed_start: int
    base_demos: int
    shots: int
    files: Dict[str, DemoFileEntry] = Field(default_factory=dict)
