"""Define-by-run tape and the tensor handle that records onto it."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

_local = threading.local()


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class Node:
    op: str
    inputs: tuple[int, ...]
    backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]]
    shape: tuple[int, ...]
    # discrete choices made during forward (relu masks, argmax, gathers);
    # used to detect non-smooth points in finite-difference checks
    key: Optional[bytes] = None


@dataclass
class Tape:
    """Append-only record of operations for one forward/backward pass."""

    nodes: list[Node] = field(default_factory=list)
    leaves: list[int] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        stack = _stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()

    def watch(self, value, name: str = "param") -> "Tensor":
        """Register a trainable leaf and return its tracked tensor."""
        data = np.array(value, dtype=np.float64)
        _check_finite(data, "watch")
        node_id = len(self.nodes)
        self.nodes.append(Node(name, (), None, data.shape))
        self.leaves.append(node_id)
        return Tensor(data, self, node_id)

    def record(self, op, inputs, data, backward, key=None) -> "Tensor":
        ids = tuple(t.node if t.node is not None else -1 for t in inputs)
        node_id = len(self.nodes)
        self.nodes.append(Node(op, ids, backward, data.shape, key))
        return Tensor(data, self, node_id)

    def signature(self) -> bytes:
        """Concatenation of every discrete choice recorded on this tape."""
        return b"".join(n.key for n in self.nodes if n.key is not None)


def _stack() -> list[Tape]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Optional[Tape]:
    stack = _stack()
    return stack[-1] if stack else None


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite value produced by {op}")


class Tensor:
    """A float64 array, optionally tracked on a tape.

    Constants carry ``node=None``; tracked tensors hold the id of the node
    that produced them on ``tape``.
    """

    __slots__ = ("data", "tape", "node")
    __array_priority__ = 100

    def __init__(self, data, tape: Optional[Tape] = None, node: Optional[int] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def tracked(self) -> bool:
        return self.node is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f"node={self.node}" if self.tracked else "const"
        return f"Tensor(shape={self.shape}, {tag})"

    def __len__(self) -> int:
        return len(self.data)

    # arithmetic sugar, resolved lazily to avoid an import cycle
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

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """Reverse sweep from a scalar ``loss``.

    Returns the gradient for every leaf watched on ``tape``, keyed by node
    id. Leaves the loss does not depend on get zero arrays.
    """
    if loss.data.shape != ():
        raise ShapeError(f"loss must be a scalar, got shape {loss.data.shape}")
    if loss.tape is not tape or loss.node is None:
        raise ValueError("loss was not produced on this tape")

    grads: list[Optional[np.ndarray]] = [None] * (loss.node + 1)
    grads[loss.node] = np.ones((), dtype=np.float64)
    nodes = tape.nodes
    for node_id in range(loss.node, -1, -1):
        g = grads[node_id]
        if g is None:
            continue
        node = nodes[node_id]
        if node.backward is None:
            continue
        input_grads = node.backward(g)
        for src, gi in zip(node.inputs, input_grads):
            if src < 0 or gi is None:
                continue
            if grads[src] is None:
                grads[src] = gi
            else:
                grads[src] = grads[src] + gi
        grads[node_id] = None if node_id != loss.node else g

    out = {}
    for leaf in tape.leaves:
        g = grads[leaf] if leaf < len(grads) else None
        out[leaf] = np.zeros(nodes[leaf].shape) if g is None else np.asarray(g, dtype=np.float64)
    return out
