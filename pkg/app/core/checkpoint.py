"""
Parameter checkpoints as JSON name→(shape, data) tables
File: app/core/checkpoint.py
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import numpy as np

from app.core.exceptions import ConfigError, MissingArtifactError
from app.schemas.checkpoint import PARAM_TABLE_VERSION, ParamTable, TensorEntry


def to_table(
    arrays: Mapping[str, np.ndarray],
    kind: str,
    meta: Optional[dict[str, Any]] = None,
) -> ParamTable:
    tensors = {
        name: TensorEntry(shape=list(np.shape(arr)), data=np.asarray(arr, dtype=np.float64).reshape(-1).tolist())
        for name, arr in arrays.items()
    }
    return ParamTable(kind=kind, meta=meta or {}, tensors=tensors)


def from_table(table: ParamTable) -> dict[str, np.ndarray]:
    return {
        name: np.asarray(entry.data, dtype=np.float64).reshape(entry.shape)
        for name, entry in table.tensors.items()
    }


def save_params(
    path: Union[str, Path],
    arrays: Mapping[str, np.ndarray],
    kind: str,
    meta: Optional[dict[str, Any]] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table = to_table(arrays, kind, meta)
    tmp = path.with_suffix(f"{path.suffix}.{os.getpid()}.tmp")
    tmp.write_text(table.model_dump_json())
    tmp.replace(path)
    return path


def load_params(path: Union[str, Path], kind: Optional[str] = None) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(kind or "checkpoint", str(path))
    table = ParamTable.model_validate_json(path.read_text())
    if table.format_version != PARAM_TABLE_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint format_version {table.format_version}")
    if kind is not None and table.kind != kind:
        raise ConfigError(f"{path}: expected a '{kind}' checkpoint, found '{table.kind}'")
    return from_table(table), table.meta
