"""Minimal reverse-mode automatic differentiation.

Values are :class:`Tensor` objects wrapping contiguous numpy arrays.  While a
:class:`Tape` is active (``with Tape() as tape:``) every primitive that
consumes a ``requires_grad`` tensor appends a node to it; :func:`backward`
replays the nodes in reverse append order.  Outside a tape nothing is
recorded, which keeps inference memory flat.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_active_tapes: list["Tape"] = []


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf from finite inputs."""


class Tensor:
    """Dense float array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        arr = np.array(data, dtype=dtype, copy=True) if dtype is not None else np.array(data, copy=True)
        if arr.dtype not in SUPPORTED_DTYPES:
            arr = arr.astype(np.float32 if dtype is None else dtype)
        if arr.dtype not in SUPPORTED_DTYPES:
            raise TypeError(f"unsupported dtype {arr.dtype}; expected float32 or float64")
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"tensor {name or ''} constructed with non-finite values".strip())
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        # internal fast path; caller guarantees dtype and finiteness
        t = cls.__new__(cls)
        t.data = np.ascontiguousarray(arr)
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() requires a single-element tensor")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{tag})"


@dataclass
class Node:
    op: str
    inputs: tuple
    output: Tensor
    # maps d(loss)/d(output) to a tuple of input gradients (None where not needed)
    backward_fn: Callable[[np.ndarray], tuple]


class Tape:
    """Ordered record of the operations executed while it is active."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _active_tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _active_tapes.pop()
        assert popped is self, "tapes must be exited in LIFO order"

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> None:
        backward(self, loss)


def active_tape() -> Optional[Tape]:
    return _active_tapes[-1] if _active_tapes else None


def check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"op '{op}' produced non-finite values")
    return arr


def make_output(op: str, out: np.ndarray, inputs: Sequence[Tensor],
                backward_fn: Callable[[np.ndarray], tuple]) -> Tensor:
    """Wrap a primitive's result and record it on the active tape."""
    check_finite(out, op)
    needs_grad = any(t.requires_grad for t in inputs)
    result = Tensor._wrap(out, needs_grad)
    tape = active_tape()
    if tape is not None and needs_grad:
        tape.nodes.append(Node(op, tuple(inputs), result, backward_fn))
    return result


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate ``.grad`` of every requires_grad tensor consumed on ``tape``.

    Gradients of tensors feeding several nodes are summed.  Tensors that
    were recorded but do not influence ``loss`` receive zeros.
    """
    if loss.data.size != 1:
        raise ValueError("backward requires scalar loss")
    producer = None
    for idx, node in enumerate(tape.nodes):
        if node.output is loss:
            producer = idx
    if producer is None:
        raise ValueError("loss tensor was not produced on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    consumed: dict[int, Tensor] = {}
    for node in tape.nodes[: producer + 1]:
        for t in node.inputs:
            if t.requires_grad:
                consumed[id(t)] = t

    for node in reversed(tape.nodes[: producer + 1]):
        g_out = grads.get(id(node.output))
        if g_out is None:
            continue
        in_grads = node.backward_fn(g_out)
        for t, g in zip(node.inputs, in_grads):
            if g is None or not t.requires_grad:
                continue
            if g.shape != t.data.shape:
                raise RuntimeError(f"op '{node.op}' returned gradient of shape {g.shape} for input {t.data.shape}")
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g

    for key, t in consumed.items():
        g = grads.get(key)
        t.grad = np.zeros_like(t.data) if g is None else np.ascontiguousarray(g, dtype=t.data.dtype)
    loss.grad = np.ones_like(loss.data)


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    n_checked: int
    worst_input: int = -1
    worst_index: tuple = ()

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"{status} max_rel_err={self.max_rel_err:.3e} over {self.n_checked} elements"


def grad_check(op_closure: Callable[..., Tensor], inputs: Sequence[Tensor],
               tolerance: float = 1e-4, step: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Every element of every input is perturbed by ``h = step * max(1, |x|)``.
    The relative error is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError("grad_check requires float64 inputs")

    flags = [t.requires_grad for t in inputs]
    for t in inputs:
        t.requires_grad = True
    try:
        with Tape() as tape:
            out = op_closure(*inputs)
        if out.data.size != 1:
            raise ValueError("grad_check closure must return a scalar")
        backward(tape, out)
        analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]

        def evaluate() -> float:
            return float(op_closure(*inputs).data.reshape(-1)[0])

        worst = (0.0, -1, ())
        n_checked = 0
        for k, t in enumerate(inputs):
            flat = t.data.reshape(-1)
            a_flat = analytic[k].reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                h = step * max(1.0, abs(orig))
                flat[i] = orig + h
                f_plus = evaluate()
                flat[i] = orig - h
                f_minus = evaluate()
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2.0 * h)
                a = a_flat[i]
                rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
                n_checked += 1
                if rel > worst[0]:
                    worst = (rel, k, np.unravel_index(i, t.shape))
    finally:
        for t, f in zip(inputs, flags):
            t.requires_grad = f
            t.grad = None
    return GradCheckReport(worst[0], worst[0] < tolerance, n_checked, worst[1], tuple(int(v) for v in worst[2]))
