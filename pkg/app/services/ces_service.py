"""
Task relation graph and policy-weight fusion
File: app/services/ces_service.py

Each learned task is a node (P̂ᵢ, Wᵢ). A new task's head is fused as

    Ŵ_j = λ₁ · (mean_{i<j} s_ij · Wᵢ + W_j) + λ₂ · W_base

with s_ij the cosine similarity of the prompt embeddings clamped to [0, 1].
Nodes are append-only; fused heads are never stored back into the graph.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union
import logging
import os

import numpy as np

from app.core.exceptions import ConfigError, DegeneracyError, DimensionError, FusionError, GraphError, MissingArtifactError
from app.schemas.graph import GRAPH_FORMAT_VERSION, GraphFile, GraphNodeEntry
from app.schemas.report import SimilarityReport

logger = logging.getLogger(__name__)


COEFFICIENT_TOLERANCE = 1e-12


@dataclass(frozen=True)
class TaskNode:
    task_id: str
    prompt_embedding: np.ndarray
    head_weights: np.ndarray
    session_index: int

    def __post_init__(self):
        emb = np.asarray(self.prompt_embedding, dtype=np.float64).reshape(-1)
        head = np.asarray(self.head_weights, dtype=np.float64).reshape(-1)
        if emb.size == 0 or not np.any(emb):
            raise DegeneracyError(f"Task '{self.task_id}' has a zero-norm prompt embedding")
        emb.setflags(write=False)
        head.setflags(write=False)
        object.__setattr__(self, "prompt_embedding", emb)
        object.__setattr__(self, "head_weights", head)


def relation_coefficient(p_i: np.ndarray, p_j: np.ndarray) -> float:
    """Cosine similarity of two prompt embeddings, clamped to [0, 1]"""
    a = np.asarray(p_i, dtype=np.float64).reshape(-1)
    b = np.asarray(p_j, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DimensionError(f"relation_coefficient: lengths {a.size} and {b.size} differ")
    aa, bb = float(np.dot(a, a)), float(np.dot(b, b))
    if aa == 0.0 or bb == 0.0:
        raise DegeneracyError("relation_coefficient: zero-norm prompt vector")
    s = float(np.dot(a, b)) / np.sqrt(aa * bb)
    return float(min(max(s, 0.0), 1.0))


class RelationGraph:
    """Append-only node store with a cached coefficient matrix"""

    def __init__(
        self,
        base_weights: np.ndarray,
        lambda1: float = 0.2,
        lambda2: float = 0.8,
        include_base_nodes: bool = True,
    ):
        if lambda1 < 0 or lambda2 < 0:
            raise FusionError(f"Fusion coefficients must be nonnegative, got ({lambda1}, {lambda2})")
        self.base_weights = np.asarray(base_weights, dtype=np.float64).reshape(-1).copy()
        self.lambda1 = float(lambda1)
        self.lambda2 = float(lambda2)
        self.include_base_nodes = include_base_nodes
        self.nodes: List[TaskNode] = []
        self.coefficients = np.zeros((0, 0))

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def task_ids(self) -> List[str]:
        return [n.task_id for n in self.nodes]

    def index(self, task_id: str) -> int:
        for i, node in enumerate(self.nodes):
            if node.task_id == task_id:
                return i
        raise GraphError(f"Task '{task_id}' is not in the relation graph")

    def add_node(self, node: TaskNode) -> "RelationGraph":
        if node.task_id in self.task_ids:
            raise GraphError(f"Task '{node.task_id}' is already in the relation graph")
        if node.head_weights.size != self.base_weights.size:
            raise FusionError(
                f"Head of '{node.task_id}' has {node.head_weights.size} weights, base head has {self.base_weights.size}"
            )
        if self.nodes and node.prompt_embedding.size != self.nodes[0].prompt_embedding.size:
            raise DimensionError(f"Prompt embedding of '{node.task_id}' has length {node.prompt_embedding.size}")

        n = len(self.nodes)
        grown = np.zeros((n + 1, n + 1))
        grown[:n, :n] = self.coefficients
        for i, other in enumerate(self.nodes):
            s = relation_coefficient(other.prompt_embedding, node.prompt_embedding)
            grown[i, n] = grown[n, i] = s
        grown[n, n] = 1.0
        self.nodes.append(node)
        self.coefficients = grown
        logger.debug("Graph node %d added: %s (session %d)", n, node.task_id, node.session_index)
        return self

    def predecessors(self, j: int) -> List[int]:
        if not 0 <= j < len(self.nodes):
            raise GraphError(f"Node index {j} outside a graph of {len(self.nodes)} nodes")
        return [
            i for i in range(j)
            if self.include_base_nodes or self.nodes[i].session_index > 0
        ]

    def fuse_weights(self, j: int, w_j: np.ndarray) -> np.ndarray:
        """Fused serving head of node j from its freshly trained head w_j"""
        w_j = np.asarray(w_j, dtype=np.float64).reshape(-1)
        if w_j.size != self.base_weights.size:
            raise FusionError(f"Head of length {w_j.size} cannot fuse with base head of {self.base_weights.size}")
        preds = self.predecessors(j)
        if not preds:
            return self.lambda1 * w_j + self.lambda2 * self.base_weights
        common = np.zeros_like(w_j)
        for i in preds:
            common += self.coefficients[i, j] * self.nodes[i].head_weights
        common /= len(preds)
        return self.lambda1 * (common + w_j) + self.lambda2 * self.base_weights

    def similarity_report(self) -> SimilarityReport:
        if len(self.nodes) < 2:
            raise GraphError("Similarity report needs at least two nodes")
        return SimilarityReport(task_ids=self.task_ids, matrix=self.coefficients.tolist())

    # ==================== PERSISTENCE ====================

    def to_file(self) -> GraphFile:
        return GraphFile(
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            include_base_nodes=self.include_base_nodes,
            base_weights=self.base_weights.tolist(),
            nodes=[
                GraphNodeEntry(
                    task_id=n.task_id,
                    session_index=n.session_index,
                    prompt_embedding=n.prompt_embedding.tolist(),
                    head_weights=n.head_weights.tolist(),
                )
                for n in self.nodes
            ],
            coefficients=self.coefficients.tolist(),
        )

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f"{path.suffix}.{os.getpid()}.tmp")
        tmp.write_text(self.to_file().model_dump_json())
        tmp.replace(path)
        return path

    @classmethod
    def from_file(cls, data: GraphFile, source: Optional[str] = None) -> "RelationGraph":
        """Rebuild by re-inserting nodes; the recomputed matrix must match the stored copy"""
        if data.format_version != GRAPH_FORMAT_VERSION:
            raise ConfigError(f"{source or 'graph'}: unsupported graph format_version {data.format_version}")
        graph = cls(np.asarray(data.base_weights), data.lambda1, data.lambda2, data.include_base_nodes)
        for entry in data.nodes:
            graph.add_node(TaskNode(
                task_id=entry.task_id,
                prompt_embedding=np.asarray(entry.prompt_embedding),
                head_weights=np.asarray(entry.head_weights),
                session_index=entry.session_index,
            ))
        stored = np.asarray(data.coefficients, dtype=np.float64)
        if stored.size != graph.coefficients.size:
            raise GraphError(f"{source or 'graph'}: stored coefficient matrix has the wrong size")
        stored = stored.reshape(graph.coefficients.shape)
        if not np.allclose(stored, graph.coefficients, rtol=0.0, atol=COEFFICIENT_TOLERANCE):
            raise GraphError(f"{source or 'graph'}: stored coefficients disagree with the recomputed matrix")
        return graph

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RelationGraph":
        path = Path(path)
        if not path.exists():
            raise MissingArtifactError("graph", str(path))
        return cls.from_file(GraphFile.model_validate_json(path.read_text()), source=str(path))
