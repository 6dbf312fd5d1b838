"""Minimal reverse-mode automatic differentiation on numpy arrays.

Every value is a float64 ndarray wrapped in a :class:`Tensor`. Operations
build a DAG; ``Tensor.backward()`` runs a topological sweep and accumulates
gradients into ``.grad`` of every node, including leaves. The op set is
exactly what the encoder and the metric losses need; nothing more.

Reduction order inside every op is the numpy default, which is fixed for
fixed shapes, so repeated runs are bit-identical.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

Array = np.ndarray


def _as_array(value) -> Array:
    arr = np.asarray(value, dtype=np.float64)
    return arr


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents: tuple = (), backward=None):
        self.data = _as_array(data)
        self.grad: Array | None = None
        self._parents = parents
        self._backward = backward

    # -- graph bookkeeping -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    def _accumulate(self, grad: Array) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """Forward the value, block the gradient."""
        return Tensor(self.data)

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
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
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.data + other.data, (self, other))

        def backward(grad):
            self._accumulate(_unbroadcast(grad, self.shape))
            other._accumulate(_unbroadcast(grad, other.shape))

        out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        out = Tensor(-self.data, (self,))
        out._backward = lambda grad: self._accumulate(-grad)
        return out

    def __sub__(self, other) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(other)
        return self + (-other)

    def __rsub__(self, other) -> "Tensor":
        return Tensor(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.data * other.data, (self, other))

        def backward(grad):
            self._accumulate(_unbroadcast(grad * other.data, self.shape))
            other._accumulate(_unbroadcast(grad * self.data, other.shape))

        out._backward = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.data / other.data, (self, other))

        def backward(grad):
            self._accumulate(_unbroadcast(grad / other.data, self.shape))
            other._accumulate(
                _unbroadcast(-grad * self.data / (other.data * other.data), other.shape)
            )

        out._backward = backward
        return out

    def __rtruediv__(self, other) -> "Tensor":
        return Tensor(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out = Tensor(self.data**exponent, (self,))

        def backward(grad):
            self._accumulate(grad * exponent * self.data ** (exponent - 1))

        out._backward = backward
        return out

    def __matmul__(self, other) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.data @ other.data, (self, other))

        def backward(grad):
            self._accumulate(
                _unbroadcast(grad @ np.swapaxes(other.data, -1, -2), self.shape)
            )
            other._accumulate(
                _unbroadcast(np.swapaxes(self.data, -1, -2) @ grad, other.shape)
            )

        out._backward = backward
        return out

    # -- elementwise functions ----------------------------------------------

    def exp(self) -> "Tensor":
        value = np.exp(self.data)
        out = Tensor(value, (self,))
        out._backward = lambda grad: self._accumulate(grad * value)
        return out

    def log(self) -> "Tensor":
        out = Tensor(np.log(self.data), (self,))
        out._backward = lambda grad: self._accumulate(grad / self.data)
        return out

    def sqrt(self) -> "Tensor":
        value = np.sqrt(self.data)
        out = Tensor(value, (self,))
        out._backward = lambda grad: self._accumulate(grad * 0.5 / value)
        return out

    def relu(self) -> "Tensor":
        mask = self.data > 0
        out = Tensor(np.where(mask, self.data, 0.0), (self,))
        out._backward = lambda grad: self._accumulate(grad * mask)
        return out

    def abs(self) -> "Tensor":
        sign = np.sign(self.data)
        out = Tensor(np.abs(self.data), (self,))
        out._backward = lambda grad: self._accumulate(grad * sign)
        return out

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,))

        def backward(grad):
            if axis is None:
                self._accumulate(np.broadcast_to(grad, self.shape).copy())
                return
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            if not keepdims:
                grad = np.expand_dims(grad, axes)
            self._accumulate(np.broadcast_to(grad, self.shape).copy())

        out._backward = backward
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def max(self) -> "Tensor":
        """Global max; the gradient flows to the first maximizer only."""
        idx = np.unravel_index(np.argmax(self.data), self.shape)
        out = Tensor(self.data[idx], (self,))

        def backward(grad):
            full = np.zeros_like(self.data)
            full[idx] = grad
            self._accumulate(full)

        out._backward = backward
        return out

    def min(self) -> "Tensor":
        idx = np.unravel_index(np.argmin(self.data), self.shape)
        out = Tensor(self.data[idx], (self,))

        def backward(grad):
            full = np.zeros_like(self.data)
            full[idx] = grad
            self._accumulate(full)

        out._backward = backward
        return out

    # -- shape manipulation ----------------------------------------------------

    def reshape(self, shape) -> "Tensor":
        out = Tensor(self.data.reshape(shape), (self,))
        out._backward = lambda grad: self._accumulate(grad.reshape(self.shape))
        return out

    def swapaxes(self, a: int, b: int) -> "Tensor":
        out = Tensor(np.swapaxes(self.data, a, b), (self,))
        out._backward = lambda grad: self._accumulate(np.swapaxes(grad, a, b))
        return out

    def transpose(self) -> "Tensor":
        return self.swapaxes(-1, -2)

    def broadcast_to(self, shape) -> "Tensor":
        out = Tensor(np.broadcast_to(self.data, shape).copy(), (self,))
        out._backward = lambda grad: self._accumulate(_unbroadcast(grad, self.shape))
        return out

    def __getitem__(self, index) -> "Tensor":
        out = Tensor(self.data[index], (self,))

        def backward(grad):
            full = np.zeros_like(self.data)
            np.add.at(full, index, grad)
            self._accumulate(full)

        out._backward = backward
        return out

    # -- softmax family ----------------------------------------------------------

    def softmax(self, axis: int = -1) -> "Tensor":
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        value = e / e.sum(axis=axis, keepdims=True)
        out = Tensor(value, (self,))

        def backward(grad):
            inner = (grad * value).sum(axis=axis, keepdims=True)
            self._accumulate(value * (grad - inner))

        out._backward = backward
        return out

    def log_softmax(self, axis: int = -1) -> "Tensor":
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        value = shifted - lse
        out = Tensor(value, (self,))

        def backward(grad):
            self._accumulate(grad - np.exp(value) * grad.sum(axis=axis, keepdims=True))

        out._backward = backward
        return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward(grad):
        for t, piece in zip(tensors, np.split(grad, offsets, axis=axis)):
            t._accumulate(piece)

    out._backward = backward
    return out


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.zero_grad()
