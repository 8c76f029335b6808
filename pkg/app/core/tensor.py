"""
Dense tensors on a define-by-run differentiation tape
File: app/core/tensor.py

A ``Tape`` is entered as a context manager; every primitive in ``app.core.ops``
evaluated while it is active records (inputs, output, backward rule) if any
input requires a gradient. ``backward`` then walks the records in reverse.
"""

from __future__ import annotations

from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

from app.core.exceptions import ContractError


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_active_tape: ContextVar[Optional["Tape"]] = ContextVar("active_tape", default=None)


class Tensor:
    """64-bit float array that may take part in a differentiation graph"""

    __slots__ = ("data", "requires_grad", "grad", "node_id", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data: np.ndarray = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node_id: Optional[int] = None
        self.name = name

    # ==================== SHAPE HELPERS ====================

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def __repr__(self) -> str:
        label = f", name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # ==================== OPERATORS ====================
    # Thin aliases over app.core.ops

    def __add__(self, other: "Tensor") -> "Tensor":
        from app.core import ops
        return ops.add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        from app.core import ops
        return ops.sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        from app.core import ops
        return ops.mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from app.core import ops
        return ops.matmul(self, other)

    def __neg__(self) -> "Tensor":
        from app.core import ops
        return ops.scale(self, -1.0)

    @property
    def T(self) -> "Tensor":
        from app.core import ops
        return ops.transpose(self)

    def sum(self) -> "Tensor":
        from app.core import ops
        return ops.sum(self)

    def mean(self) -> "Tensor":
        from app.core import ops
        return ops.mean(self)


def parameter(data, name: Optional[str] = None) -> Tensor:
    """Leaf tensor that requires a gradient"""
    return Tensor(data, requires_grad=True, name=name)


# ==================== TAPE ====================

@dataclass
class TapeRecord:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """Ordered log of primitive evaluations for one forward pass"""

    def __init__(self):
        self.records: list[TapeRecord] = []
        self.epoch = 0
        self._token = None

    def __enter__(self) -> "Tape":
        self.records = []
        self.epoch += 1
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.records)

    def append(self, inputs: tuple[Tensor, ...], output: Tensor, backward_fn: BackwardFn) -> None:
        output.node_id = len(self.records)
        self.records.append(TapeRecord(inputs=inputs, output=output, backward=backward_fn))

    def owns(self, tensor: Tensor) -> bool:
        idx = tensor.node_id
        return idx is not None and idx < len(self.records) and self.records[idx].output is tensor


def active_tape() -> Optional[Tape]:
    return _active_tape.get()


@contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate primitives without recording them"""
    token = _active_tape.set(None)
    try:
        yield
    finally:
        _active_tape.reset(token)


def record(output_data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    """
    Wrap a primitive's result and log it on the active tape.

    The output only requires a gradient when a tape is active and at least one
    input requires one.
    """
    tape = _active_tape.get()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(output_data, dtype=np.float64)
    out.requires_grad = needs_grad
    out.grad = None
    out.node_id = None
    out.name = None
    if needs_grad:
        tape.append(inputs, out, backward_fn)
    return out


# ==================== BACKWARD ====================

def backward(loss: Tensor, tape: Tape, params: Optional[Iterable[Tensor]] = None) -> None:
    """
    Reverse-mode accumulation from a scalar ``loss`` recorded on ``tape``.

    Gradients add onto existing ``.grad`` buffers; callers zero them between
    steps. Every requires_grad leaf seen on the tape, and every tensor in
    ``params``, ends with a populated buffer (zeros when unused).
    """
    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not tape.owns(loss):
        raise ContractError("backward() loss was not recorded on the given tape")

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}

    for rec in reversed(tape.records):
        out_grad = pending.pop(id(rec.output), None)
        if out_grad is None:
            continue
        rec.output.grad = out_grad if rec.output.grad is None else rec.output.grad + out_grad
        input_grads = rec.backward(out_grad)
        for inp, g in zip(rec.inputs, input_grads):
            if not inp.requires_grad:
                continue
            if not tape.owns(inp):
                leaves[id(inp)] = inp
            if g is None:
                continue
            g = np.asarray(g, dtype=np.float64).reshape(inp.shape)
            key = id(inp)
            pending[key] = g if key not in pending else pending[key] + g

    for key, leaf in leaves.items():
        g = pending.get(key)
        if g is None:
            g = np.zeros_like(leaf.data)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g

    if params is not None:
        for p in params:
            if p.requires_grad and p.grad is None:
                p.grad = np.zeros_like(p.data)
