"""Tensors and the reverse-mode tape.

A :class:`Tape` is a per-thread recording context. Operations in
:mod:`cloudadapt.numerics.ops` append a node to the active tape whenever one of
their inputs requires a gradient and recording is enabled; otherwise they are
plain numpy forward computations.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class NonFiniteError(ValueError):
    pass


class ContractError(RuntimeError):
    """A documented precondition of an operation was violated."""


class TapeAllocationError(RuntimeError):
    """Raised when something tries to record gradients while they are forbidden."""


_state = threading.local()

_counter_lock = threading.Lock()
_counters = {"tapes": 0, "nodes": 0}

_checked = True


def set_checked(flag: bool) -> None:
    """Toggle the finite-value check performed by ``Tensor(...)``."""
    global _checked
    _checked = bool(flag)


def _get(name, default):
    return getattr(_state, name, default)


def tape_counters() -> dict:
    """Process-wide totals of tapes created and nodes recorded."""
    with _counter_lock:
        return dict(_counters)


def _bump(key: str) -> None:
    with _counter_lock:
        _counters[key] += 1


_process_forbid = 0
_dtype = np.float64


def default_dtype():
    return _dtype


@contextmanager
def precision(dtype) -> Iterator[None]:
    """Set the float type new tensors are created with (float64 unless changed).

    Training may run in float32 for speed; gradient checks and serving stay in
    float64. Not thread-safe: intended to wrap a whole single-threaded run.
    """
    global _dtype
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"precision must be float32 or float64, got {dtype}")
    prev, _dtype = _dtype, dtype
    try:
        yield
    finally:
        _dtype = prev


def grad_enabled() -> bool:
    return _process_forbid == 0 and _get("grad_enabled", True)


def grad_forbidden() -> bool:
    return _process_forbid > 0 or _get("forbid_depth", 0) > 0


@contextmanager
def no_grad() -> Iterator[None]:
    prev = _get("grad_enabled", True)
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextmanager
def grad_disabled(process_wide: bool = False) -> Iterator[None]:
    """Disable recording and turn any attempt to build a tape into an error.

    This is the guard the device path runs under. With ``process_wide`` the
    ban covers every thread (server workers included), not just the caller's.
    """
    global _process_forbid
    if process_wide:
        with _counter_lock:
            _process_forbid += 1
    prev = _get("grad_enabled", True)
    _state.grad_enabled = False
    _state.forbid_depth = _get("forbid_depth", 0) + 1
    try:
        yield
    finally:
        _state.forbid_depth -= 1
        _state.grad_enabled = prev
        if process_wide:
            with _counter_lock:
                _process_forbid -= 1


class Tensor:
    """Dense float array (float64 by default) with an optional gradient requirement."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=_dtype)
        if _checked and not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor contains NaN or Inf")
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar, defined in ops to avoid an import cycle
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=_dtype))


@dataclass
class Node:
    tensor: Tensor
    parents: tuple
    vjp: Optional[Callable]


class Tape:
    """Ordered record of primitive applications.

    Node ids are positions in :attr:`nodes`; parents always precede children.
    """

    def __init__(self):
        if grad_forbidden():
            raise TapeAllocationError("tape created while gradients are forbidden")
        self.nodes: list[Node] = []
        self._index: dict[int, int] = {}
        _bump("tapes")

    def __enter__(self) -> "Tape":
        stack = _get("tapes", None)
        if stack is None:
            stack = _state.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.tapes.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def node_id(self, t: Tensor) -> Optional[int]:
        return self._index.get(id(t))

    def _leaf(self, t: Tensor) -> int:
        idx = self._index.get(id(t))
        if idx is None:
            idx = self._append(t, (), None)
        return idx

    def _append(self, t: Tensor, parents: tuple, vjp) -> int:
        if grad_forbidden():
            raise TapeAllocationError("attempted to record a node while gradients are forbidden")
        idx = len(self.nodes)
        self.nodes.append(Node(t, parents, vjp))
        self._index[id(t)] = idx
        _bump("nodes")
        return idx

    def record(self, out: Tensor, inputs: Sequence[Tensor], vjp: Callable) -> None:
        parents = tuple(self._leaf(x) if x.requires_grad else None for x in inputs)
        self._append(out, parents, vjp)

    def grad(self, grads: dict, t: Tensor) -> Optional[np.ndarray]:
        idx = self._index.get(id(t))
        return None if idx is None else grads.get(idx)


def active_tape() -> Optional[Tape]:
    stack = _get("tapes", None)
    if not stack or not grad_enabled():
        return None
    return stack[-1]


def record(out_data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Wrap ``out_data`` and record it on the active tape if needed.

    ``vjp(g)`` must return one cotangent (or None) per input.
    """
    tape = active_tape()
    needs = tape is not None and any(x.requires_grad for x in inputs)
    out = Tensor._wrap(out_data, requires_grad=needs)
    if needs:
        tape.record(out, inputs, vjp)
    return out


def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """Reverse sweep from a scalar ``loss``; returns gradients keyed by node id."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    start = tape.node_id(loss)
    if start is None:
        raise ContractError("loss was not recorded on this tape")
    grads: dict[int, np.ndarray] = {start: np.ones_like(loss.data)}
    for i in range(start, -1, -1):
        g = grads.get(i)
        if g is None:
            continue
        node = tape.nodes[i]
        if node.vjp is None:
            continue
        for p, pg in zip(node.parents, node.vjp(g)):
            if p is None or pg is None:
                continue
            prev = grads.get(p)
            grads[p] = pg if prev is None else prev + pg
    return grads


def gradients_for(tape: Tape, grads: dict, params: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradient arrays aligned with ``params``; unused parameters get zeros."""
    out = []
    for p in params:
        g = tape.grad(grads, p)
        out.append(np.zeros_like(p.data) if g is None else g)
    return out
