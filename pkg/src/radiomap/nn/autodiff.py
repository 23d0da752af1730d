"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Only the operations a graph attention network needs are provided. Binary
elementwise ops accept equal shapes or a scalar operand; there is no general
broadcasting.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward
        self.name = name

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if not self.requires_grad:
            return
        self.grad = g.copy() if self.grad is None else self.grad + g

    def backward(self, grad=None):
        """Propagate ``grad`` (ones for a scalar) to every ancestor requiring grad."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accum(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
        return self

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self):
        return total(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_same(a: Tensor, b: Tensor):
    if a.data.shape != b.data.shape and a.data.size != 1 and b.data.size != 1:
        raise ValueError(f"shape mismatch {a.data.shape} vs {b.data.shape}")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b)
    return Tensor(a.data + b.data, _parents=(a, b),
                  _backward=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def add_row(a, b) -> Tensor:
    """``a (n, d) + b (d,)`` with ``b`` repeated over rows."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.shape != (a.shape[1],):
        raise ValueError(f"cannot add a row of shape {b.shape} to {a.shape}")
    return Tensor(a.data + b.data, _parents=(a, b), _backward=lambda g: (g, g.sum(axis=0)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b)
    return Tensor(a.data - b.data, _parents=(a, b),
                  _backward=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b)
    return Tensor(a.data * b.data, _parents=(a, b),
                  _backward=lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def square(a: Tensor) -> Tensor:
    return Tensor(a.data * a.data, _parents=(a,), _backward=lambda g: (2.0 * a.data * g,))


def total(a: Tensor) -> Tensor:
    return Tensor(a.data.sum(), _parents=(a,), _backward=lambda g: (np.full(a.shape, float(g)),))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    return Tensor(a.data @ b.data, _parents=(a, b), _backward=lambda g: (g @ b.data.T, a.data.T @ g))


def reshape(a: Tensor, shape) -> Tensor:
    return Tensor(a.data.reshape(shape), _parents=(a,), _backward=lambda g: (g.reshape(a.shape),))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    pos = a.data > 0
    return Tensor(np.where(pos, a.data, slope * a.data), _parents=(a,),
                  _backward=lambda g: (np.where(pos, g, slope * g),))


def elu(a: Tensor) -> Tensor:
    neg = a.data <= 0
    em1 = np.expm1(np.minimum(a.data, 0.0))
    out = np.where(neg, em1, a.data)
    return Tensor(out, _parents=(a,), _backward=lambda g: (np.where(neg, g * (em1 + 1.0), g),))


def scale_rows(w: Tensor, x: Tensor) -> Tensor:
    """``w[:, None] * x`` for a vector ``w`` of length ``x.shape[0]``."""
    if w.data.ndim != 1 or x.data.ndim != 2 or w.shape[0] != x.shape[0]:
        raise ValueError(f"scale_rows shape mismatch {w.shape}, {x.shape}")
    return Tensor(w.data[:, None] * x.data, _parents=(w, x),
                  _backward=lambda g: ((g * x.data).sum(axis=1), w.data[:, None] * g))


class Segments:
    """Index array ``idx`` (values in ``range(n)``) with fast scatter-add.

    When ``idx`` is sorted and covers every segment, reductions use
    ``reduceat`` over contiguous runs.
    """

    def __init__(self, idx, n: int):
        self.idx = np.asarray(idx, dtype=np.int64)
        self.n = int(n)
        counts = np.bincount(self.idx, minlength=self.n)
        self.contiguous = bool(np.all(np.diff(self.idx) >= 0)) and bool(np.all(counts > 0))
        self.starts = np.concatenate([[0], np.cumsum(counts)[:-1]]) if self.contiguous else None
        self._mat = None

    @property
    def matrix(self) -> sp.csr_matrix:
        if self._mat is None:
            E = len(self.idx)
            self._mat = sp.csr_matrix((np.ones(E), (self.idx, np.arange(E))), shape=(self.n, E))
        return self._mat

    def scatter(self, values: np.ndarray) -> np.ndarray:
        if self.contiguous:
            return np.add.reduceat(values, self.starts, axis=0)
        if values.ndim == 1:
            return np.bincount(self.idx, weights=values, minlength=self.n)
        return np.asarray(self.matrix @ values)

    def max(self, values: np.ndarray) -> np.ndarray:
        if self.contiguous:
            return np.maximum.reduceat(values, self.starts)
        out = np.full(self.n, -np.inf)
        np.maximum.at(out, self.idx, values)
        return out


def gather(a: Tensor, seg: Segments) -> Tensor:
    """Rows ``a[seg.idx]``."""
    if a.shape[0] != seg.n:
        raise ValueError(f"gather: tensor has {a.shape[0]} rows, index expects {seg.n}")
    return Tensor(a.data[seg.idx], _parents=(a,), _backward=lambda g: (seg.scatter(g),))


def segment_sum(a: Tensor, seg: Segments) -> Tensor:
    """Sum rows of ``a`` into ``seg.n`` buckets given by ``seg.idx``."""
    return Tensor(seg.scatter(a.data), _parents=(a,), _backward=lambda g: (g[seg.idx],))


def segment_softmax(e: Tensor, seg: Segments) -> Tensor:
    """Softmax of a 1-D score vector within each segment (max-subtracted)."""
    shifted = e.data - seg.max(e.data)[seg.idx]
    ex = np.exp(shifted)
    out = ex / seg.scatter(ex)[seg.idx]

    def backward(g):
        inner = seg.scatter(g * out)[seg.idx]
        return (out * (g - inner),)

    return Tensor(out, _parents=(e,), _backward=backward)


def edge_aggregate(alpha: Tensor, h: Tensor, src: np.ndarray, indptr: np.ndarray) -> Tensor:
    """``out[i] = sum_e alpha[e] * h[src[e]]`` over edges ``indptr[i]:indptr[i+1]``.

    Equivalent to ``segment_sum(scale_rows(alpha, gather(h, src)), dst)`` for
    dst-sorted edges, computed as one sparse product.
    """
    n = len(indptr) - 1
    if alpha.data.shape != src.shape or h.shape[0] != n:
        raise ValueError("edge_aggregate shape mismatch")
    A = sp.csr_matrix((alpha.data, src, indptr), shape=(n, n))
    dst = np.repeat(np.arange(n), np.diff(indptr))

    def backward(g):
        g_alpha = np.einsum("ij,ij->i", g[dst], h.data[src])
        return g_alpha, np.asarray(A.T @ g)

    return Tensor(np.asarray(A @ h.data), _parents=(alpha, h), _backward=backward)
