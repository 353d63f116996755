"""Reverse-mode autodiff tape and a central finite-difference oracle.

Kernel ops accept plain ``numpy`` arrays or :class:`Var` handles.  When any
operand is a ``Var`` the op records a node on that operand's tape together
with a closure mapping the output cotangent to parent cotangents.  With
plain arrays nothing is recorded, so one forward implementation serves both
the traced and untraced paths.
"""

from __future__ import annotations

from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import TapeError


class Var:
    """Handle to a value recorded on a :class:`Tape`."""

    __slots__ = ("value", "tape", "index")

    def __init__(self, value: np.ndarray, tape: "Tape", index: int):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __len__(self) -> int:
        return len(self.value)

    def __repr__(self) -> str:
        return f"Var(#{self.index}, shape={self.value.shape})"


class _Node:
    __slots__ = ("parents", "vjp", "shape", "dtype", "name")

    def __init__(self, parents, vjp, shape, dtype, name=None):
        self.parents = parents
        self.vjp = vjp
        self.shape = shape
        self.dtype = dtype
        self.name = name


class Tape:
    """Ordered record of primitive ops.

    Nodes are appended as ops execute, so every node references only earlier
    nodes and a reversed sweep is a valid topological order.  A tape is not
    thread-safe; use one per worker.
    """

    def __init__(self):
        self.nodes: List[_Node] = []
        self.leaves: Dict[str, int] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, value, name: str) -> Var:
        if name in self.leaves:
            raise TapeError(f"leaf {name!r} already registered")
        value = np.asarray(value)
        var = self._push(value, (), None, name)
        self.leaves[name] = var.index
        return var

    def leaves_from(self, arrays: Dict[str, np.ndarray]) -> Dict[str, Var]:
        return {name: self.leaf(arr, name) for name, arr in arrays.items()}

    def _push(self, value, parents, vjp, name=None) -> Var:
        node = _Node(parents, vjp, value.shape, value.dtype, name)
        self.nodes.append(node)
        return Var(value, self, len(self.nodes) - 1)

    def backward(self, loss: Var) -> Dict[str, np.ndarray]:
        """Gradients of a scalar ``loss`` with respect to every leaf.

        Leaves the loss does not depend on receive zero arrays.
        """
        if not isinstance(loss, Var) or loss.tape is not self:
            raise TapeError("loss must be a Var recorded on this tape")
        if loss.value.size != 1:
            raise TapeError(f"loss must be scalar, got shape {loss.value.shape}")

        grads: List[Optional[np.ndarray]] = [None] * len(self.nodes)
        grads[loss.index] = np.ones(loss.value.shape, dtype=np.float64)
        for i in range(loss.index, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.vjp is None:
                continue
            parent_grads = node.vjp(g)
            for p, pg in zip(node.parents, parent_grads):
                if p is None or pg is None:
                    continue
                if grads[p] is None:
                    grads[p] = np.array(pg, dtype=np.float64)
                else:
                    grads[p] = grads[p] + pg
        out = {}
        for name, idx in self.leaves.items():
            node = self.nodes[idx]
            g = grads[idx]
            if g is None:
                g = np.zeros(node.shape)
            out[name] = g.astype(node.dtype)
        return out


def value(x):
    """Underlying array of ``x`` whether traced or not."""
    return x.value if isinstance(x, Var) else x


def record(out: np.ndarray, inputs: Sequence, vjp: Callable) -> "np.ndarray | Var":
    """Return ``out``, wrapped on a tape if any of ``inputs`` is traced.

    ``vjp`` maps the output cotangent to one cotangent per input (``None``
    for inputs that are not traced).
    """
    tape = None
    for x in inputs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise TapeError("operands recorded on different tapes")
    if tape is None:
        return out
    parents = tuple(x.index if isinstance(x, Var) else None for x in inputs)
    return tape._push(out, parents, vjp)


def finite_diff_grad(f: Callable[[np.ndarray], float], x, step: float = 1e-3) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``.

    Each coordinate is perturbed by ``+step`` and ``-step`` in turn; ``x`` is
    restored afterwards.  The result has the dtype of ``x``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.array(x, copy=True)
    flat = x.reshape(-1)
    grad = np.empty(flat.shape, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(f(x))
        flat[i] = orig - step
        fm = float(f(x))
        flat[i] = orig
        grad[i] = (fp - fm) / (2.0 * step)
    return grad.reshape(x.shape).astype(x.dtype)


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """Norm-wise relative error ``|a-b| / max(|a|, |b|)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)
