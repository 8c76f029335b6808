from pydantic import BaseModel, Field
from typing import List


GRAPH_FORMAT_VERSION = 1


class GraphNodeEntry(BaseModel):
    task_id: str
    session_index: int = Field(..., ge=0)
    prompt_embedding: List[float]
    head_weights: List[float]


# graph.json: node table + fusion config; coefficients are re-derived on load
class GraphFile(BaseModel):
    format_version: int = GRAPH_FORMAT_VERSION
    lambda1: float
    lambda2: float
    include_base_nodes: bool = True
    base_weights: List[float]
    nodes: List[GraphNodeEntry] = Field(default_factory=list)
    coefficients: List[List[float]] = Field(default_factory=list)
