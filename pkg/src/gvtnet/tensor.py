"""Differentiable tensors on a dynamically recorded operation tape.

Reverse-mode only: every operation wires a closure that scatters the
output gradient back onto its inputs, and ``Tensor.backward`` replays the
closures in reverse topological order.  Data buffers are never mutated by
operations; optimizers update parameter ``data`` in place *between* tape
constructions, so a recorded tape is always internally consistent.

Float64 is the default dtype (finite-difference checking needs it);
float32 is accepted for faster training.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

__all__ = ["Tensor", "ShapeError", "NumericsError", "no_grad"]


class ShapeError(ValueError):
    """Operand extents are inconsistent; the message names the offender."""


class NumericsError(ArithmeticError):
    """Non-finite values invalidated a computation."""


_FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


class no_grad:
    """Context manager that suspends tape recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _accum(t: "Tensor", g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape`, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def make_op(data: np.ndarray, parents: Iterable["Tensor"], backward) -> "Tensor":
    """Wrap an op result, recording it on the tape iff any parent is live."""
    out = Tensor(data)
    live = tuple(p for p in parents if p.requires_grad) if _grad_enabled else ()
    if live:
        out.requires_grad = True
        out._parents = live
        out._backward = backward
    return out


class Tensor:
    """Dense n-dimensional array with optional gradient tracking.

    ``data`` is a row-major float array; ``grad`` is allocated lazily on
    first accumulation and always matches ``data`` in shape.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # ------------------------------------------------------------------
    # bookkeeping

    @property
    def shape(self) -> tuple[int, ...]:
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
        return float(self.data.item())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return (f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, "
                f"requires_grad={self.requires_grad})")

    def __len__(self) -> int:
        return len(self.data)

    # ------------------------------------------------------------------
    # reverse pass

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every live ancestor."""
        if self.size != 1:
            raise ShapeError(
                f"backward() requires a scalar output, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("backward() on a tensor outside the tape")
        order = self._topo_order()
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    def _topo_order(self) -> list["Tensor"]:
        # Iterative DFS; deep models overflow Python's recursion limit.
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return order

    # ------------------------------------------------------------------
    # elementwise arithmetic

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def backward(g):
            if a.requires_grad:
                _accum(a, _unbroadcast(g, a.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(g, b.shape))

        return make_op(a.data + b.data, (a, b), backward)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def backward(g):
            if a.requires_grad:
                _accum(a, _unbroadcast(g, a.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(-g, b.shape))

        return make_op(a.data - b.data, (a, b), backward)

    def __rsub__(self, other):
        return self._coerce(other).__sub__(self)

    def __mul__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def backward(g):
            if a.requires_grad:
                _accum(a, _unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(g * a.data, b.shape))

        return make_op(a.data * b.data, (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def backward(g):
            if a.requires_grad:
                _accum(a, _unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        return make_op(a.data / b.data, (a, b), backward)

    def __rtruediv__(self, other):
        return self._coerce(other).__truediv__(self)

    def __neg__(self):
        a = self

        def backward(g):
            if a.requires_grad:
                _accum(a, -g)

        return make_op(-a.data, (a,), backward)

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise TypeError("only scalar exponents are supported")
        a = self
        p = float(exponent)

        def backward(g):
            if a.requires_grad:
                _accum(a, g * p * a.data ** (p - 1.0))

        return make_op(a.data ** p, (a,), backward)

    def abs(self):
        """|x| elementwise; subgradient 0 at x == 0."""
        a = self

        def backward(g):
            if a.requires_grad:
                _accum(a, g * np.sign(a.data))

        return make_op(np.abs(a.data), (a,), backward)

    # ------------------------------------------------------------------
    # linear algebra

    def __matmul__(self, other):
        other = self._coerce(other)
        a, b = self, other
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError("matmul requires operands of rank >= 2")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(
                f"matmul: inner extents differ, {a.shape[-1]} vs {b.shape[-2]}")

        def backward(g):
            if a.requires_grad:
                _accum(a, _unbroadcast(
                    np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(
                    np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

        return make_op(np.matmul(a.data, b.data), (a, b), backward)

    # ------------------------------------------------------------------
    # shape manipulation

    def reshape(self, shape: Sequence[int]):
        a = self
        shape = tuple(shape)
        old = a.shape

        def backward(g):
            if a.requires_grad:
                _accum(a, g.reshape(old))

        return make_op(a.data.reshape(shape), (a,), backward)

    def transpose(self, axes: Sequence[int]):
        a = self
        axes = tuple(axes)
        inverse = tuple(np.argsort(axes))

        def backward(g):
            if a.requires_grad:
                _accum(a, g.transpose(inverse))

        return make_op(a.data.transpose(axes), (a,), backward)

    def swap_last_two(self):
        axes = tuple(range(self.ndim - 2)) + (self.ndim - 1, self.ndim - 2)
        return self.transpose(axes)

    def roll(self, shifts: Sequence[int], axes: Sequence[int]):
        a = self
        shifts = tuple(int(s) for s in shifts)
        axes = tuple(axes)
        inverse = tuple(-s for s in shifts)

        def backward(g):
            if a.requires_grad:
                _accum(a, np.roll(g, inverse, axis=axes))

        return make_op(np.roll(a.data, shifts, axis=axes), (a,), backward)

    def __getitem__(self, idx):
        # Basic slicing only: index regions must be disjoint views.
        if isinstance(idx, (np.ndarray, list, Tensor)):
            raise TypeError("advanced indexing is not supported on the tape")
        a = self

        def backward(g):
            if a.requires_grad:
                buf = np.zeros_like(a.data)
                buf[idx] = g
                _accum(a, buf)

        return make_op(a.data[idx], (a,), backward)

    # ------------------------------------------------------------------
    # reductions

    def sum(self, axis=None, keepdims: bool = False):
        a = self

        def backward(g):
            if not a.requires_grad:
                return
            if axis is None:
                _accum(a, np.broadcast_to(g, a.shape).copy())
                return
            if not keepdims:
                g = np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(g, a.shape).copy())

        return make_op(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.shape[ax] for ax in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)
