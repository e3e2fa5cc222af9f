"""Reverse-mode automatic differentiation over numpy arrays.

A small tape: each operation returns a :class:`Tensor` holding a float64
array, its parents, and a closure that distributes the output gradient to
the parents.  Only the feed-forward ops needed by the training losses are
implemented (affine layers, pointwise nonlinearities, reductions, concat,
elementwise min).  Everything runs in 64-bit so gradients can be checked
tightly against finite differences.
"""

from __future__ import annotations

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


class Tensor:
    """Node in the computation graph.

    ``data`` is always a float64 ndarray.  ``grad`` is lazily allocated on
    the first backward contribution; leaf tensors may pre-assign ``grad`` to
    a persistent buffer (a view into a flat gradient vector), in which case
    contributions are accumulated in place.
    """

    __slots__ = ("data", "grad", "parents", "_backward", "needs_grad", "_grad_preassigned")

    def __init__(self, data, parents=(), backward=None, needs_grad=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self._backward = backward
        self._grad_preassigned = False
        if needs_grad is None:
            needs_grad = any(p.needs_grad for p in parents)
        self.needs_grad = needs_grad

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def attach_grad(self, buf):
        """Accumulate this leaf's gradient into ``buf`` (not reallocated)."""
        self.grad = buf
        self._grad_preassigned = True
        self.needs_grad = True

    def accumulate(self, g):
        if self._grad_preassigned:
            np.add(self.grad, g, out=self.grad)
        elif self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def backward(self):
        """Backpropagate from this (scalar) tensor through the tape."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss tensor")
        if not np.isfinite(self.data):
            raise NumericsError(f"non-finite loss: {float(self.data)}")
        order = _topo_order(self)
        self.accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Arithmetic sugar used by the loss builders.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __rmul__(self, other):
        return mul(self, other)


class NumericsError(ArithmeticError):
    """Raised when a loss or gradient is not finite."""


def _topo_order(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.needs_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def constant(x):
    """Wrap an array as a graph input that does not receive gradients."""
    return Tensor(x, needs_grad=False)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else constant(np.asarray(x, dtype=np.float64))


def _unbroadcast(g, shape):
    """Sum ``g`` back down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        if a.needs_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.needs_grad:
            b.accumulate(_unbroadcast(g, b.data.shape))

    return Tensor(out_data, (a, b), backward)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data

    def backward(g):
        if a.needs_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.needs_grad:
            b.accumulate(_unbroadcast(-g, b.data.shape))

    return Tensor(out_data, (a, b), backward)


def mul(a, b):
    if isinstance(b, (int, float)):
        a = _as_tensor(a)
        s = float(b)

        def backward_scalar(g):
            if a.needs_grad:
                a.accumulate(g * s)

        return Tensor(a.data * s, (a,), backward_scalar)

    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        if a.needs_grad:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.needs_grad:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, (a, b), backward)


def linear(x, w, b):
    """Affine layer ``x @ w + b`` with a fused backward."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    out_data = x.data @ w.data + b.data

    def backward(g):
        if w.needs_grad:
            w.accumulate(x.data.T @ g)
        if b.needs_grad:
            b.accumulate(g.sum(axis=0))
        if x.needs_grad:
            x.accumulate(g @ w.data.T)

    return Tensor(out_data, (x, w, b), backward)


def relu(x):
    x = _as_tensor(x)
    out_data = np.maximum(x.data, 0.0)

    def backward(g):
        if x.needs_grad:
            x.accumulate(g * (x.data > 0.0))

    return Tensor(out_data, (x,), backward)


def tanh(x):
    x = _as_tensor(x)
    out_data = np.tanh(x.data)

    def backward(g):
        if x.needs_grad:
            x.accumulate(g * (1.0 - out_data * out_data))

    return Tensor(out_data, (x,), backward)


def exp(x):
    x = _as_tensor(x)
    out_data = np.exp(x.data)

    def backward(g):
        if x.needs_grad:
            x.accumulate(g * out_data)

    return Tensor(out_data, (x,), backward)


def softplus(x):
    """log(1 + e^x), computed stably."""
    x = _as_tensor(x)
    out_data = np.logaddexp(0.0, x.data)

    def backward(g):
        if x.needs_grad:
            # d/dx softplus = sigmoid(x)
            x.accumulate(g / (1.0 + np.exp(-x.data)))

    return Tensor(out_data, (x,), backward)


def square(x):
    x = _as_tensor(x)

    def backward(g):
        if x.needs_grad:
            x.accumulate(g * (2.0 * x.data))

    return Tensor(x.data * x.data, (x,), backward)


def clip(x, lo, hi):
    """Clamp; gradient is passed through inside [lo, hi] and zero outside."""
    x = _as_tensor(x)
    out_data = np.clip(x.data, lo, hi)

    def backward(g):
        if x.needs_grad:
            x.accumulate(g * ((x.data >= lo) & (x.data <= hi)))

    return Tensor(out_data, (x,), backward)


def minimum(a, b):
    """Elementwise min; the gradient follows the smaller branch (ties go to a)."""
    a, b = _as_tensor(a), _as_tensor(b)
    take_a = a.data <= b.data
    out_data = np.where(take_a, a.data, b.data)

    def backward(g):
        if a.needs_grad:
            a.accumulate(g * take_a)
        if b.needs_grad:
            b.accumulate(g * ~take_a)

    return Tensor(out_data, (a, b), backward)


def concat_cols(a, b):
    """Concatenate two 2-D tensors along axis 1."""
    a, b = _as_tensor(a), _as_tensor(b)
    na = a.data.shape[1]
    out_data = np.concatenate([a.data, b.data], axis=1)

    def backward(g):
        if a.needs_grad:
            a.accumulate(g[:, :na])
        if b.needs_grad:
            b.accumulate(g[:, na:])

    return Tensor(out_data, (a, b), backward)


def col(x, j):
    """Select column ``j`` of a 2-D tensor, keeping 2-D shape (n, 1)."""
    x = _as_tensor(x)
    out_data = x.data[:, j : j + 1]

    def backward(g):
        if x.needs_grad:
            full = np.zeros_like(x.data)
            full[:, j : j + 1] = g
            x.accumulate(full)

    return Tensor(out_data, (x,), backward)


def sum_cols(x):
    """Row-wise sum of a 2-D tensor, shape (n, d) -> (n, 1)."""
    x = _as_tensor(x)
    out_data = x.data.sum(axis=1, keepdims=True)

    def backward(g):
        if x.needs_grad:
            x.accumulate(np.broadcast_to(g, x.data.shape))

    return Tensor(out_data, (x,), backward)


def mean(x):
    x = _as_tensor(x)
    n = x.data.size
    out_data = np.asarray(x.data.mean())

    def backward(g):
        if x.needs_grad:
            x.accumulate(np.broadcast_to(g / n, x.data.shape))

    return Tensor(out_data, (x,), backward)


def gradient(params, loss_fn):
    """Evaluate ``loss_fn`` (a closure returning a scalar Tensor) and return
    d(loss)/d(p) for each tensor in ``params``.

    Gradients left on the params by earlier calls are cleared first.
    """
    for p in params:
        if p._grad_preassigned:
            p.grad.fill(0.0)
        else:
            p.grad = None
    loss = loss_fn()
    loss.backward()
    out = []
    for p in params:
        if p.grad is None:
            out.append(np.zeros_like(p.data))
        else:
            out.append(np.array(p.grad, copy=True))
    return out
