"""
Session and run report schemas
File: app/schemas/report.py
"""

from pydantic import BaseModel, Field, model_validator
from typing import Dict, List, Optional


SUMMARY_FORMAT_VERSION = 1


class SessionReport(BaseModel):
    session: int = Field(..., ge=0)
    method: str
    seed: int
    task_rates: Dict[str, float] = Field(default_factory=dict, description="task_id → success rate, catalog order")
    average: float = 0.0

    @model_validator(mode="after")
    def check_rates(self):
        for task_id, rate in self.task_rates.items():
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"success rate of {task_id} outside [0, 1]: {rate}")
        expected = self.mean_rate(self.task_rates)
        if abs(self.average - expected) > 1e-12:
            raise ValueError(f"average {self.average} is not the mean of the task rates ({expected})")
        return self

    @staticmethod
    def mean_rate(task_rates: Dict[str, float]) -> float:
        if not task_rates:
            return 0.0
        return sum(task_rates.values()) / len(task_rates)

    @classmethod
    def from_rates(cls, session: int, method: str, seed: int, task_rates: Dict[str, float]) -> "SessionReport":
        return cls(session=session, method=method, seed=seed, task_rates=dict(task_rates),
                   average=cls.mean_rate(task_rates))


class TaskForgetting(BaseModel):
    task_id: str
    first_session: int
    first_accuracy: float
    final_accuracy: float
    forgetting: float


class RunSummary(BaseModel):
    format_version: int = SUMMARY_FORMAT_VERSION
    method: str
    seed: int
    shots: int
    config_hash: str
    schedule_hash: str
    reports: List[SessionReport] = Field(default_factory=list)
    session_average: float = 0.0
    final_average: float = 0.0
    baseline_method: Optional[str] = None
    improvement: Optional[float] = None
    forgetting: List[TaskForgetting] = Field(default_factory=list)
    mean_forgetting: float = 0.0
    retained_demo_ids: List[str] = Field(default_factory=list)


class ParameterSummary(BaseModel):
    stage: str
    groups: Dict[str, int]
    trainable_groups: List[str]
    total: int
    trainable: int


class SimilarityReport(BaseModel):
    task_ids: List[str]
    matrix: List[List[float]]
    related_mean: Optional[float] = None
    disjoint_mean: Optional[float] = None


class SweepRow(BaseModel):
    sweep: str
    point: str
    method: str
    seed: int
    run_dir: str
    session_average: float
    final_average: float
    mean_forgetting: float
