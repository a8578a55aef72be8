"""Reverse-mode automatic differentiation on numpy float64 arrays.

Define-by-run: every op appends a backward closure to the tensors it
creates, and ``backward()`` walks the graph in reverse topological order.
The tape is rebuilt on every forward pass; there is no graph reuse.
"""

from __future__ import annotations

import numpy as np

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndim_diff = grad.ndim - len(shape)
    if ndim_diff > 0:
        grad = grad.sum(axis=tuple(range(ndim_diff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("value", "grad", "_parents", "_backward", "requires_grad")

    def __init__(self, value, requires_grad=False, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad and _GRAD_ENABLED
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    # ---- graph construction -------------------------------------------

    @staticmethod
    def _make(value, parents, backward):
        req = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out = Tensor(value, requires_grad=req)
        if req:
            out._parents = tuple(p for p in parents if p.requires_grad)
            out._backward = backward
        return out

    def _accum(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += grad

    # ---- arithmetic ----------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out_val = self.value + other.value

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.value.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g, other.value.shape))

        return Tensor._make(out_val, (self, other), bwd)

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        out_val = self.value - other.value

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.value.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(-g, other.value.shape))

        return Tensor._make(out_val, (self, other), bwd)

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        out_val = self.value * other.value

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g * other.value, self.value.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g * self.value, other.value.shape))

        return Tensor._make(out_val, (self, other), bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out_val = self.value / other.value

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g / other.value, self.value.shape))
            if other.requires_grad:
                other._accum(
                    _unbroadcast(-g * self.value / other.value**2, other.value.shape)
                )

        return Tensor._make(out_val, (self, other), bwd)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __neg__(self):
        def bwd(g):
            self._accum(-g)

        return Tensor._make(-self.value, (self,), bwd)

    def __matmul__(self, other):
        other = as_tensor(other)
        out_val = self.value @ other.value

        def bwd(g):
            if self.requires_grad:
                self._accum(g @ other.value.T)
            if other.requires_grad:
                other._accum(self.value.T @ g)

        return Tensor._make(out_val, (self, other), bwd)

    def __getitem__(self, idx):
        out_val = self.value[idx]

        def bwd(g):
            full = np.zeros_like(self.value)
            np.add.at(full, idx, g)
            self._accum(full)

        return Tensor._make(out_val, (self,), bwd)

    # ---- elementwise ----------------------------------------------------

    def square(self):
        def bwd(g):
            self._accum(g * 2.0 * self.value)

        return Tensor._make(self.value**2, (self,), bwd)

    def exp(self):
        out_val = np.exp(self.value)

        def bwd(g):
            self._accum(g * out_val)

        return Tensor._make(out_val, (self,), bwd)

    def log(self):
        def bwd(g):
            self._accum(g / self.value)

        return Tensor._make(np.log(self.value), (self,), bwd)

    def tanh(self):
        out_val = np.tanh(self.value)

        def bwd(g):
            self._accum(g * (1.0 - out_val**2))

        return Tensor._make(out_val, (self,), bwd)

    def sigmoid(self):
        out_val = 1.0 / (1.0 + np.exp(-self.value))

        def bwd(g):
            self._accum(g * out_val * (1.0 - out_val))

        return Tensor._make(out_val, (self,), bwd)

    def elu(self):
        v = self.value
        out_val = np.where(v > 0, v, np.expm1(v))

        def bwd(g):
            self._accum(g * np.where(v > 0, 1.0, out_val + 1.0))

        return Tensor._make(out_val, (self,), bwd)

    def abs(self):
        def bwd(g):
            self._accum(g * np.sign(self.value))

        return Tensor._make(np.abs(self.value), (self,), bwd)

    def clip(self, lo, hi):
        """Clamp with zero gradient outside [lo, hi]."""
        mask = (self.value >= lo) & (self.value <= hi)

        def bwd(g):
            self._accum(g * mask)

        return Tensor._make(np.clip(self.value, lo, hi), (self,), bwd)

    # ---- reductions ------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out_val = self.value.sum(axis=axis, keepdims=keepdims)

        def bwd(g):
            if axis is None:
                self._accum(np.broadcast_to(g, self.value.shape).copy())
            else:
                if not keepdims:
                    g = np.expand_dims(g, axis)
                self._accum(np.broadcast_to(g, self.value.shape).copy())

        return Tensor._make(out_val, (self,), bwd)

    def mean(self, axis=None, keepdims=False):
        n = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / float(n)

    def reshape(self, *shape):
        old = self.value.shape

        def bwd(g):
            self._accum(g.reshape(old))

        return Tensor._make(self.value.reshape(*shape), (self,), bwd)

    # ---- utility ---------------------------------------------------------

    def detach(self):
        return Tensor(self.value.copy())

    def item(self):
        return float(self.value)

    def backward(self):
        if self.value.size != 1:
            raise ValueError("backward() requires a scalar loss")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---- free functions ----------------------------------------------------


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out_val = np.concatenate([t.value for t in tensors], axis=axis)
    sizes = [t.value.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accum(g[tuple(sl)])

    return Tensor._make(out_val, tuple(tensors), bwd)


def maximum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    mask = a.value >= b.value
    out_val = np.where(mask, a.value, b.value)

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * mask, a.value.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * ~mask, b.value.shape))

    return Tensor._make(out_val, (a, b), bwd)


def minimum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    mask = a.value <= b.value
    out_val = np.where(mask, a.value, b.value)

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * mask, a.value.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * ~mask, b.value.shape))

    return Tensor._make(out_val, (a, b), bwd)


def where(cond: np.ndarray, a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_val = np.where(cond, a.value, b.value)

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * cond, a.value.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * ~cond, b.value.shape))

    return Tensor._make(out_val, (a, b), bwd)


def logsumexp(t: Tensor, axis=-1, keepdims=False):
    m = t.value.max(axis=axis, keepdims=True)
    shifted = t - Tensor(m)
    s = shifted.exp().sum(axis=axis, keepdims=True).log() + Tensor(m)
    if not keepdims:
        sl = [slice(None)] * s.ndim
        sl[axis] = 0
        return s[tuple(sl)]
    return s


def softmax(t: Tensor, axis=-1):
    m = t.value.max(axis=axis, keepdims=True)
    e = (t - Tensor(m)).exp()
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(t: Tensor, axis=-1):
    return t - logsumexp(t, axis=axis, keepdims=True)
