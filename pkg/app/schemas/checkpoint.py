from pydantic import BaseModel, Field, model_validator
from typing import Any, Dict, List


PARAM_TABLE_VERSION = 1


# Flat tensor entry: shape + row-major float data
class TensorEntry(BaseModel):
    shape: List[int] = Field(default_factory=list)
    data: List[float]

    @model_validator(mode="after")
    def check_size(self):
        size = 1
        for s in self.shape:
            size *= s
        if size != len(self.data):
            raise ValueError(f"shape {self.shape} does not hold {len(self.data)} values")
        return self


# Name → tensor table; insertion order is the on-disk order
class ParamTable(BaseModel):
    format_version: int = PARAM_TABLE_VERSION
    kind: str = Field(..., description="stage1 | stage2 | session")
    meta: Dict[str, Any] = Field(default_factory=dict)
    tensors: Dict[str, TensorEntry] = Field(default_factory=dict)
