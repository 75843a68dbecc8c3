"""Rank-4 tensors with a reverse-mode gradient tape.

Every value in the network is a :class:`Tensor` with dims ``(n, c, h, w)``;
scalars are ``(1, 1, 1, 1)`` and per-channel parameters are ``(1, c, 1, 1)``.
Operators record a backward rule onto the active :class:`Tape`, and
``Tape.backward`` walks the records in reverse, accumulating gradients
additively wherever a node fans out.

Training runs in float32; float64 is reserved for finite-difference gradient
checking.
"""

from __future__ import annotations

import itertools
from typing import Callable, Optional, Sequence

import numpy as np

_node_ids = itertools.count()
_tape_stack: list["Tape"] = []
_debug_checks = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle NaN/Inf validation on tensor creation (slow; meant for tests)."""
    global _debug_checks
    _debug_checks = enabled


class Tensor:
    """A rank-4 array ``(n, c, h, w)`` that can participate in gradient taping.

    Parameters
    ----------
    data:
        Anything ``np.asarray`` accepts, as long as the result is 4-d.
    requires_grad:
        Mark this tensor as a gradient target. Gradients land in ``.grad``
        after ``Tape.backward``.
    dtype:
        float32 (default) or float64.
    """

    __slots__ = ("data", "requires_grad", "grad", "node_id", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if arr.ndim != 4:
            raise ValueError(
                f"tensors are rank-4 (n, c, h, w); got shape {arr.shape}"
            )
        if _debug_checks and not np.all(np.isfinite(arr)):
            raise FloatingPointError("non-finite values in tensor data")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node_id = next(_node_ids)
        self._tape: Optional["Tape"] = None

    # -- constructors ------------------------------------------------------

    @classmethod
    def scalar(cls, value: float, dtype=np.float32) -> "Tensor":
        return cls(np.full((1, 1, 1, 1), value, dtype=dtype))

    @classmethod
    def zeros(cls, dims: Sequence[int], dtype=np.float32, requires_grad=False) -> "Tensor":
        return cls(np.zeros(tuple(dims), dtype=dtype), requires_grad=requires_grad)

    @classmethod
    def ones(cls, dims: Sequence[int], dtype=np.float32, requires_grad=False) -> "Tensor":
        return cls(np.ones(tuple(dims), dtype=dtype), requires_grad=requires_grad)

    # -- views -------------------------------------------------------------

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on non-scalar tensor with dims {self.dims}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A taped-off copy sharing nothing with the graph."""
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(dims={self.dims}, dtype={self.data.dtype}{flag})"

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def sum(self) -> "Tensor":
        return sum_all(self)


class TapeEntry:
    """One recorded operation: node identifiers plus a backward rule."""

    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs: tuple[Tensor, ...] = inputs
        self.output: Tensor = output
        self.backward: Callable = backward

    @property
    def input_ids(self) -> tuple[int, ...]:
        return tuple(t.node_id for t in self.inputs)

    @property
    def output_id(self) -> int:
        return self.output.node_id


class Tape:
    """Ordered record of operations for one reverse pass.

    Recording order is execution order, which is already topological: every
    operation's inputs were created before its output. ``backward`` therefore
    walks the entries once, in reverse. A tape belongs to a single training
    step; it is not shared across concurrent executions.
    """

    def __init__(self):
        self._entries: list[TapeEntry] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _tape_stack.pop()
        assert popped is self, "tape stack corrupted"

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, inputs: tuple[Tensor, ...], output: Tensor, backward) -> None:
        output._tape = self
        self._entries.append(TapeEntry(inputs, output, backward))

    def reset(self) -> None:
        """Allow another backward pass over the same records."""
        self._consumed = False

    def backward(self, loss: Tensor) -> None:
        """Accumulate gradients of ``loss`` onto every reachable tensor.

        Each node is visited exactly once; fan-out gradients add. Gradients
        are written to ``.grad`` on every reachable tensor that has
        ``requires_grad`` set, replacing whatever was there before.
        """
        if self._consumed:
            raise RuntimeError(
                "backward() already ran on this tape; call reset() first"
            )
        if loss.dims != (1, 1, 1, 1):
            raise ValueError(f"loss must be a scalar (1,1,1,1) tensor, got {loss.dims}")
        produced = {e.output_id for e in self._entries}
        if loss.node_id not in produced:
            raise ValueError("loss is not a node recorded on this tape")
        self._consumed = True

        grads: dict[int, np.ndarray] = {
            loss.node_id: np.ones((1, 1, 1, 1), dtype=loss.data.dtype)
        }
        leaves: dict[int, Tensor] = {}
        for entry in reversed(self._entries):
            g = grads.pop(entry.output_id, None)
            if g is None:
                continue
            if entry.output.requires_grad:
                entry.output.grad = g
            needs = tuple(t.requires_grad for t in entry.inputs)
            input_grads = entry.backward(g, needs)
            for t, ig in zip(entry.inputs, input_grads):
                if ig is None:
                    continue
                acc = grads.get(t.node_id)
                grads[t.node_id] = ig if acc is None else acc + ig
                if t.node_id not in produced:
                    leaves[t.node_id] = t
        for nid, t in leaves.items():
            if t.requires_grad:
                t.grad = grads[nid]


def active_tape() -> Optional[Tape]:
    return _tape_stack[-1] if _tape_stack else None


def backward(loss: Tensor) -> None:
    """Run the reverse pass of the tape that recorded ``loss``."""
    if loss._tape is None:
        raise ValueError("loss was not recorded on any tape")
    loss._tape.backward(loss)


def record_op(inputs: tuple[Tensor, ...], out_data: np.ndarray, backward_rule) -> Tensor:
    """Wrap an op result, registering the backward rule if a tape is live.

    ``backward_rule(grad_out, needs)`` returns one gradient array (or None)
    per input; ``needs`` flags which inputs actually require a gradient.
    """
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(inputs, out, backward_rule)
    return out


def _matching_dtype(*tensors: Tensor):
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise TypeError(
                f"mixed tensor dtypes {dt} vs {t.data.dtype}; "
                "run the whole graph in one precision"
            )
    return dt


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(i for i in range(4) if shape[i] == 1 and g.shape[i] != 1)
    return g.sum(axis=axes, keepdims=True)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; the smaller operand broadcasts (numpy rules, rank 4)."""
    _matching_dtype(a, b)
    out = a.data + b.data
    a_shape, b_shape = a.data.shape, b.data.shape

    def _backward(g, needs):
        ga = _unbroadcast(g, a_shape) if needs[0] else None
        gb = _unbroadcast(g, b_shape) if needs[1] else None
        return ga, gb

    return record_op((a, b), out, _backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with broadcasting; used for region masking."""
    _matching_dtype(a, b)
    out = a.data * b.data
    a_data, b_data = a.data, b.data

    def _backward(g, needs):
        ga = _unbroadcast(g * b_data, a_data.shape) if needs[0] else None
        gb = _unbroadcast(g * a_data, b_data.shape) if needs[1] else None
        return ga, gb

    return record_op((a, b), out, _backward)


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a python scalar constant (not differentiated through)."""
    factor = float(factor)
    out = x.data * factor

    def _backward(g, needs):
        return (g * factor,)

    return record_op((x,), out, _backward)


def sum_all(x: Tensor) -> Tensor:
    """Full reduction to a scalar (1,1,1,1) tensor."""
    out = np.asarray(x.data.sum(), dtype=x.data.dtype).reshape(1, 1, 1, 1)
    shape, dtype = x.data.shape, x.data.dtype

    def _backward(g, needs):
        return (np.full(shape, g.reshape(()), dtype=dtype),)

    return record_op((x,), out, _backward)
