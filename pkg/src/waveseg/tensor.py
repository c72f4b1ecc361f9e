"""Dense NCHW tensors and a reverse-mode automatic differentiation tape.

Every value flowing through the network is a :class:`Tensor4`: a 4-D array in
batch x channel x height x width layout with a gradient slot. Differentiable
operations (see :mod:`waveseg.ops`) record themselves on the currently active
:class:`Tape`; :func:`backward` replays the tape in reverse to accumulate
gradients for every watched parameter.

The tape is deliberately simple: nodes are stored in execution order, which is
already a topological order, and a backward pass visits each node exactly
once. Tensors and tapes are single-writer; do not mutate a tensor while an
operation recording it is in flight.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, ShapeError

_DTYPES = {"f32": np.float32, "f64": np.float64}
_DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}

_tensor_ids = itertools.count(1)


def np_dtype(dtype: str) -> np.dtype:
    """Map a dtype name ("f32" or "f64") to the numpy dtype."""
    try:
        return np.dtype(_DTYPES[dtype])
    except KeyError:
        raise ContractError(f"unsupported dtype {dtype!r}; expected 'f32' or 'f64'")


class Tensor4:
    """A dense 4-D array in (n, c, h, w) layout, row-major with w fastest.

    Parameters
    ----------
    data:
        Array-like of exactly four dimensions. Integer input is promoted to
        f64 unless ``dtype`` says otherwise; float16 and friends are rejected.
    dtype:
        Optional "f32"/"f64" to force the storage type.
    """

    __slots__ = ("data", "grad", "tid")

    def __init__(self, data, dtype: Optional[str] = None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(np_dtype(dtype), copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            if arr.dtype.kind not in "iuf":
                raise ContractError(f"cannot build a Tensor4 from dtype {arr.dtype}")
            arr = arr.astype(np.float64)
        if arr.ndim != 4:
            raise ShapeError(f"Tensor4 requires 4 dims (n, c, h, w); got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ShapeError(f"zero-sized tensors are rejected; got shape {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self.grad: Optional[np.ndarray] = None
        self.tid = next(_tensor_ids)

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def c(self) -> int:
        return self.data.shape[1]

    @property
    def h(self) -> int:
        return self.data.shape[2]

    @property
    def w(self) -> int:
        return self.data.shape[3]

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> str:
        return _DTYPE_NAMES[self.data.dtype]

    @classmethod
    def zeros(cls, dims: Sequence[int], dtype: str = "f32") -> "Tensor4":
        return cls(np.zeros(tuple(dims), dtype=np_dtype(dtype)))

    @classmethod
    def full(cls, dims: Sequence[int], value: float, dtype: str = "f32") -> "Tensor4":
        return cls(np.full(tuple(dims), value, dtype=np_dtype(dtype)))

    def item(self) -> float:
        if self.dims != (1, 1, 1, 1):
            raise ContractError(f"item() needs a scalar tensor; got dims {self.dims}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor4(dims={self.dims}, dtype={self.dtype})"


def check_same_dtype(op: str, *tensors: Tensor4) -> None:
    """Reject mixed f32/f64 operands; dtype is a tensor property, not implicit."""
    dtypes = {t.data.dtype for t in tensors if t is not None}
    if len(dtypes) > 1:
        names = sorted(_DTYPE_NAMES[d] for d in dtypes)
        raise ContractError(f"{op}: mixed dtypes {names}; cast inputs to a common dtype first")


@dataclass
class TapeNode:
    """One recorded operation: inputs, outputs, and its vector-Jacobian product.

    ``vjp`` maps a tuple of output gradients (entries may be None when an
    output does not influence the loss) to a tuple of input gradients aligned
    with ``inputs`` (None for inputs with no gradient, e.g. absent bias).
    """

    op: str
    inputs: tuple[Tensor4, ...]
    outputs: tuple[Tensor4, ...]
    vjp: Callable[[tuple[Optional[np.ndarray], ...]], tuple[Optional[np.ndarray], ...]]


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of operations plus the set of trainable parameters.

    Use as a context manager::

        with Tape() as tape:
            for p in graph.parameters():
                tape.watch(p)
            loss = ...
        grads = backward(tape, loss)
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self.parameters: dict[int, Tensor4] = {}

    def watch(self, tensor: Tensor4) -> None:
        self.parameters[tensor.tid] = tensor

    def watch_all(self, tensors: Sequence[Tensor4]) -> None:
        for t in tensors:
            self.watch(t)

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tapes must be exited in LIFO order"


def active_tape() -> Optional[Tape]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def record(op: str, inputs: Sequence[Tensor4], outputs: Sequence[Tensor4], vjp) -> None:
    """Append a node to the active tape, if any. No-op outside a tape."""
    tape = active_tape()
    if tape is not None:
        tape.nodes.append(TapeNode(op, tuple(inputs), tuple(outputs), vjp))


def backward(tape: Tape, loss: Tensor4) -> dict[int, np.ndarray]:
    """Accumulate d(loss)/d(parameter) for every watched parameter.

    The loss must be scalar (1x1x1x1). Returns a map from tensor id to a
    gradient array of the parameter's own shape; parameters disconnected from
    the loss receive zeros. Each parameter's ``grad`` slot is filled as well.
    Running backward twice over the same tape gives bitwise-identical results.
    """
    if loss.dims != (1, 1, 1, 1):
        raise ContractError(f"backward needs a scalar loss (1x1x1x1); got dims {loss.dims}")
    grads: dict[int, np.ndarray] = {loss.tid: np.ones((1, 1, 1, 1), dtype=loss.data.dtype)}
    # ids of arrays this pass owns exclusively; anything else is copied before
    # being stored, so in-place accumulation can never corrupt a vjp's buffer
    owned = {id(grads[loss.tid])}
    for node in reversed(tape.nodes):
        out_grads = tuple(grads.get(t.tid) for t in node.outputs)
        if all(g is None for g in out_grads):
            continue
        in_grads = node.vjp(out_grads)
        if len(in_grads) != len(node.inputs):
            raise ContractError(f"{node.op}: vjp returned {len(in_grads)} grads for {len(node.inputs)} inputs")
        for t, g in zip(node.inputs, in_grads):
            if g is None:
                continue
            if g.shape != t.dims:
                raise ContractError(f"{node.op}: gradient shape {g.shape} != input dims {t.dims}")
            seen = grads.get(t.tid)
            if seen is None:
                if g.base is not None or id(g) in owned:
                    g = g.copy()
                grads[t.tid] = g
                owned.add(id(g))
            else:
                seen += g
    result: dict[int, np.ndarray] = {}
    for tid, p in tape.parameters.items():
        g = grads.get(tid)
        if g is None:
            g = np.zeros_like(p.data)
        p.grad = g
        result[tid] = g
    return result
