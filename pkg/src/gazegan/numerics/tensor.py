"""Tensor container and the gradient tape that records operations on it."""

from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class InvalidShapeError(ValueError):
    pass


class InvalidIndexError(IndexError):
    pass


class ContractError(RuntimeError):
    pass


class Tensor:
    """A float64 array that may take part in reverse-mode differentiation.

    ``data`` is held as a numpy array; ``grad`` has the same shape once a
    backward pass has reached the tensor.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64, copy=True) if not isinstance(
            data, np.ndarray
        ) or data.dtype != np.float64 else data
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar, delegated to ops
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

        return ops.mul(self, -1.0)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class TapeNode:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


_active_tape: contextvars.ContextVar[Optional["GradTape"]] = contextvars.ContextVar(
    "gazegan_active_tape", default=None
)


@dataclass
class GradTape:
    """Records differentiable operations executed inside ``with tape:``.

    Nodes are appended in execution order, so every node's inputs were
    produced by earlier nodes (or are leaves).
    """

    nodes: list[TapeNode] = field(default_factory=list)
    _token: Optional[contextvars.Token] = field(default=None, repr=False)

    def __enter__(self) -> "GradTape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def record(self, inputs: Sequence[Tensor], output: Tensor, backward: BackwardFn) -> None:
        self.nodes.append(TapeNode(tuple(inputs), output, backward))

    def backward(self, loss: Tensor) -> None:
        backward(self, loss)


def current_tape() -> Optional[GradTape]:
    return _active_tape.get()


def result(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Wrap an op's output and record it on the active tape when needed."""
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape = _active_tape.get()
        if tape is not None:
            tape.record(inputs, out, backward_fn)
    return out


def backward(tape: GradTape, loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor of ``tape`` that requires it.

    Gradients accumulate into existing ``.grad`` arrays of leaf tensors, so
    callers clear them between steps.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = {id(node.output) for node in tape.nodes}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g_out = grads.pop(id(node.output), None)
        if g_out is None:
            continue
        node.output.grad = g_out
        in_grads = node.backward(g_out)
        for t, g in zip(node.inputs, in_grads):
            if g is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
            if key not in produced:
                leaves[key] = t
    for key, t in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        t.grad = g.copy() if t.grad is None else t.grad + g
    if id(loss) not in produced and loss.requires_grad:
        loss.grad = np.ones_like(loss.data)
