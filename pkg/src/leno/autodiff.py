"""A small reverse-mode automatic differentiation tape over numpy arrays."""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Tensor:
    """Array with an optional gradient and the closure that propagates it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, parents=(), backward=None, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _wrap(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        return add(self, self._wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(self._wrap(other)))

    def __rsub__(self, other):
        return add(self._wrap(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, self._wrap(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._wrap(other)
        if not other.requires_grad:
            return mul(self, Tensor(1.0 / other.data))
        return mul(self, reciprocal(other))

    def __rtruediv__(self, other):
        return mul(self._wrap(other), reciprocal(self))

    def __matmul__(self, other):
        return matmul(self, self._wrap(other))

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every leaf that requires a gradient."""
        if grad is None:
            if self.data.size != 1:
                raise ValidationError(f"backward needs a scalar output, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            stack.extend((p, False) for p in node._parents)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _node(data, parents, backward):
    rg = any(p.requires_grad for p in parents)
    return Tensor(data, rg, parents if rg else (), backward if rg else None)


def add(a, b):
    def back(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)
    return _node(a.data + b.data, (a, b), back)


def neg(a):
    return _node(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    def back(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)
    return _node(a.data * b.data, (a, b), back)


def reciprocal(a):
    out = 1.0 / a.data
    return _node(out, (a,), lambda g: (-g * out * out,))


def matmul(a, b):
    def back(g):
        return (g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None)
    return _node(a.data @ b.data, (a, b), back)


def relu(a):
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0).astype(a.dtype, copy=False), (a,), lambda g: (g * mask,))


def exp(a):
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def total(a):
    return _node(a.data.sum(), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def row_norms(a):
    """Euclidean norm of each row (last axis)."""
    out = np.sqrt(np.sum(a.data * a.data, axis=-1))

    def back(g):
        safe = np.where(out > 0, out, 1)
        return (np.where(out[..., None] > 0, a.data * (g / safe)[..., None], 0),)
    return _node(out, (a,), back)


def clamp_min(a, floor):
    """``max(a, floor)`` elementwise; the gradient is zero where the floor is active."""
    keep = a.data > floor
    return _node(np.where(keep, a.data, floor).astype(a.dtype, copy=False), (a,), lambda g: (g * keep,))
