"""Dense tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a numpy array. While a ``GradientTape`` is active,
operations from :mod:`forgelens.autodiff.ops` append nodes to it; calling
``tape.gradients(loss)`` walks the node list in strict reverse append
order and accumulates gradients into the ``grad`` attribute of every
tensor created with ``requires_grad=True``.

Training runs in float32; passing ``dtype=np.float64`` everywhere gives
the higher-precision mode used by finite-difference oracles.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from ..exceptions import ShapeError

__all__ = ["Tensor", "GradientTape", "active_tape"]

DEFAULT_DTYPE = np.float32

_state = threading.local()


def _tape_stack() -> list:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = []
        _state.stack = stack
    return stack


def active_tape() -> "GradientTape | None":
    """The innermost tape on this thread, or None outside any tape."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A numpy-backed value that can participate in a gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """The underlying array. Treat it as read-only."""
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; the implementations live in ops.py to keep the
    # tape logic in one place.
    def __add__(self, other):
        from . import ops

        return ops.add(self, ops.as_tensor(other, like=self))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, ops.as_tensor(other, like=self))

    def __rsub__(self, other):
        from . import ops

        return ops.sub(ops.as_tensor(other, like=self), self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, ops.as_tensor(other, like=self))

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops

        return ops.div(self, ops.as_tensor(other, like=self))

    def __neg__(self):
        from . import ops

        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: tuple, backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class GradientTape:
    """Append-only record of differentiable operations.

    Usage::

        with GradientTape() as tape:
            loss = model_loss(...)
        tape.gradients(loss)

    A tape can be consumed exactly once; reusing it raises RuntimeError.
    Tapes are thread-local, so independent tapes may run on separate
    threads, but a single tape must not be shared.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._used = False

    def __enter__(self) -> "GradientTape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("GradientTape exited out of order")
        stack.pop()

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
        """Append one op. ``backward(dout)`` must return one gradient array
        (or None) per input, aligned with ``inputs``."""
        self._nodes.append(_Node(out, tuple(inputs), backward))

    def gradients(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Backpropagate from a scalar loss.

        Sets ``t.grad`` on every ``requires_grad`` tensor reachable from
        the loss (accumulating over all consumers) and returns those
        leaves as a mapping. Rejects reuse: a tape records one forward
        pass and supports one backward pass.
        """
        if self._used:
            raise RuntimeError("this GradientTape was already consumed; build a new tape")
        if loss.data.size != 1:
            raise ShapeError(f"gradients() requires a scalar loss, got shape {loss.shape}")
        self._used = True

        grads: dict[int, np.ndarray] = {id(loss.data): np.ones_like(loss.data)}
        # Key by the data buffer id: unlike tensor ids, it is unique per
        # node output and cannot be recycled while the tape holds a ref.
        leaf_by_key: dict[int, Tensor] = {}
        produced = {id(node.out.data) for node in self._nodes}

        for node in reversed(self._nodes):
            dout = grads.pop(id(node.out.data), None)
            if dout is None:
                continue
            dins = node.backward(dout)
            for t, din in zip(node.inputs, dins):
                if din is None or not t.requires_grad:
                    continue
                key = id(t.data)
                if key in grads:
                    grads[key] = grads[key] + din
                else:
                    grads[key] = din
                if key not in produced:
                    leaf_by_key[key] = t

        leaves: dict[Tensor, np.ndarray] = {}
        for key, t in leaf_by_key.items():
            g = grads[key]
            t.grad = g if t.grad is None else t.grad + g
            leaves[t] = g
        return leaves

    def __len__(self) -> int:
        return len(self._nodes)


def collect_parameters(tensors: Iterable[Tensor]) -> list[Tensor]:
    """Filter an iterable down to gradient-bearing tensors."""
    return [t for t in tensors if t.requires_grad]
