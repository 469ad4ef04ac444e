"""Dense tensors with reverse-mode differentiation.

Only the handful of operations needed by an MLP classifier and RBF-kernel
losses are provided. Values live in numpy arrays; every differentiable
operation records a closure that maps the output gradient onto its inputs.

    >>> w = Tensor([[1.0, -2.0]], requires_grad=True)
    >>> loss = (w * w).sum() * 0.5
    >>> backward_pass(loss, [w])[0]
    array([[ 1., -2.]])
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DomainError, NumericError, ShapeError

DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op="leaf"):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_leaf(self):
        return not self._parents

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, op={self.op}{flag})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        """Same values, cut from the graph; gradients never flow through it."""
        return Tensor(self.data)

    def backward(self):
        return backward_pass(self)

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __neg__ = lambda self: mul(self, -1.0)
    __matmul__ = lambda self, other: matmul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self):
        return mean(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn, op):
    parents = tuple(p for p in parents if p.requires_grad)
    if not parents:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn, op=op)


def _accumulate(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype).reshape(t.data.shape)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}") from exc

    def back(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _node(out, (a, b), back, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data - b.data
    except ValueError as exc:
        raise ShapeError(f"cannot subtract shapes {a.shape} and {b.shape}") from exc

    def back(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, -_unbroadcast(g, b.shape))

    return _node(out, (a, b), back, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}") from exc

    def back(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _node(out, (a, b), back, "mul")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: _accumulate(a, g * out), "exp")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: _accumulate(a, g * mask), "relu")


# -- reductions and indexing ----------------------------------------------


def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis)

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _node(out, (a,), back, "sum")


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    return _node(a.data.mean(), (a,), lambda g: _accumulate(a, np.full(a.shape, g / n)), "mean")


def take_rows(a, index) -> Tensor:
    """Gather rows ``a[index]``; repeated indices receive summed gradients."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        _accumulate(a, full)

    return _node(a.data[index], (a,), back, "take_rows")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} @ {b.shape}")

    def back(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _node(a.data @ b.data, (a, b), back, "matmul")


# -- fused operations -----------------------------------------------------


def pairwise_sqdist(x, y) -> Tensor:
    """Matrix of squared Euclidean distances between rows of ``x`` and ``y``.

    Uses ``‖x‖² + ‖y‖² − 2x·y`` clipped at zero. When ``x`` and ``y`` are
    the same tensor the result is symmetrised and its diagonal set to
    exactly zero.
    """
    x, y = as_tensor(x), as_tensor(y)
    if x.data.ndim != 2 or y.data.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ShapeError(f"pairwise_sqdist needs N×d and M×d, got {x.shape} and {y.shape}")
    xx = np.einsum("ij,ij->i", x.data, x.data)
    if x is y:
        out = xx[:, None] + xx[None, :] - 2.0 * (x.data @ x.data.T)
        out = 0.5 * (out + out.T)
        np.fill_diagonal(out, 0.0)
    else:
        yy = np.einsum("ij,ij->i", y.data, y.data)
        out = xx[:, None] + yy[None, :] - 2.0 * (x.data @ y.data.T)
    np.maximum(out, 0.0, out=out)

    def back(g):
        if x is y:
            _accumulate(x, 2.0 * (x.data * (g.sum(axis=0) + g.sum(axis=1))[:, None]
                                  - (g + g.T) @ x.data))
            return
        if x.requires_grad:
            _accumulate(x, 2.0 * (x.data * g.sum(axis=1)[:, None] - g @ y.data))
        if y.requires_grad:
            _accumulate(y, 2.0 * (y.data * g.sum(axis=0)[:, None] - g.T @ x.data))

    return _node(out, (x, y), back, "pairwise_sqdist")


def log_softmax(logits) -> Tensor:
    """Row-wise log-softmax, stabilised by subtracting each row's maximum."""
    logits = as_tensor(logits)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    probs = np.exp(out)

    def back(g):
        _accumulate(logits, g - probs * g.sum(axis=1, keepdims=True))

    return _node(out, (logits,), back, "log_softmax")


def softmax(logits) -> np.ndarray:
    """Plain row-wise softmax on values (no graph)."""
    z = np.asarray(logits, dtype=DTYPE)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean over rows of ``-log softmax(logits)[label]``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.intp)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} vs labels {labels.shape}")
    n, m = logits.shape
    if n < 1:
        raise DomainError("softmax_cross_entropy needs at least one row")
    if labels.min() < 0 or labels.max() >= m:
        raise DomainError(f"labels must lie in [0, {m})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    out = np.mean(lse - z[rows, labels])

    def back(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1.0
        _accumulate(logits, p * (g / n))

    return _node(out, (logits,), back, "softmax_cross_entropy")


# -- graph traversal ------------------------------------------------------


class Graph:
    """Nodes reachable from a scalar output, in topological order."""

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes = _toposort(output)

    def zero_grad(self):
        # None stands for an all-zero gradient until something accumulates.
        for node in self.nodes:
            node.grad = None

    def backward(self):
        if self.output.data.size != 1:
            raise ContractError(f"backward needs a scalar output, got shape {self.output.shape}")
        self.zero_grad()
        self.output.grad = np.ones_like(self.output.data)
        for node in reversed(self.nodes):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        for node in self.nodes:
            if node.is_leaf and node.grad is None:
                node.grad = np.zeros_like(node.data)

    def leaves(self):
        return [n for n in self.nodes if n.is_leaf]


def _toposort(output: Tensor):
    order, seen = [], set()
    stack = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward_pass(output: Tensor, wrt: Sequence[Tensor] | None = None):
    """Reverse-mode sweep from a scalar ``output``.

    All gradients in the graph are reset to zero first, so repeated calls
    give identical results. Returns the gradients of ``wrt`` (leaves not
    reached by the graph get zeros), or of every graph leaf when omitted.
    """
    graph = Graph(output)
    if wrt is not None:
        for t in wrt:
            t.grad = np.zeros_like(t.data)
    if output.requires_grad or output.data.size != 1:
        graph.backward()
    if wrt is None:
        return [leaf.grad for leaf in graph.leaves()]
    return [t.grad for t in wrt]


def finite_diff_grad(f: Callable[[list], float], params, eps: float = 1e-5):
    """Central-difference gradient of scalar ``f`` at ``params``.

    ``params`` is a list of arrays; ``f`` receives a list of (perturbed)
    copies and must return a float.
    """
    if eps <= 0:
        raise DomainError("eps must be positive")
    base = [np.array(p, dtype=DTYPE, copy=True) for p in params]
    grads = []
    for k, p in enumerate(base):
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f(base))
            flat[i] = orig - eps
            lo = float(f(base))
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NumericError(f"non-finite evaluation at param {k}, index {i}")
            g.reshape(-1)[i] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads


def relative_error(a, b, floor=1e-8) -> float:
    """``‖a − b‖ / max(‖a‖, ‖b‖, floor)`` over the flattened arrays."""
    a = np.concatenate([np.ravel(x) for x in a]) if isinstance(a, (list, tuple)) else np.ravel(a)
    b = np.concatenate([np.ravel(x) for x in b]) if isinstance(b, (list, tuple)) else np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))
