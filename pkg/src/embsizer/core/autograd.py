"""Reverse-mode autodiff over numpy arrays.

A Tensor wraps an ndarray and remembers how it was produced; calling
``backward()`` on a scalar result walks the graph in reverse topological order
and accumulates gradients into every node, including intermediates (the
sampler reads gradients of intermediate embedding tensors).

Only the operations the models in this package need are implemented. All ops
preserve the input dtype, so a model built in float32 stays float32 end to end.
"""
from __future__ import annotations

import numpy as np

from ..errors import NumericsError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, -other if isinstance(other, Tensor) else -other)

    def __neg__(self):
        out = Tensor(-self.data, parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(-g)
        return out

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _as_scalar(x, like: np.ndarray):
    # python scalars keep the array dtype under numpy's promotion rules
    return x


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        out = Tensor(a.data + b, parents=(a,))
        if out.requires_grad:
            out._backward = lambda g: a._accumulate(_unbroadcast(g, a.data.shape))
        return out
    out = Tensor(a.data + b.data, parents=(a, b))
    if out.requires_grad:
        def _bw(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.data.shape))
        out._backward = _bw
    return out


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        out = Tensor(a.data * b, parents=(a,))
        if out.requires_grad:
            out._backward = lambda g: a._accumulate(_unbroadcast(g * b, a.data.shape))
        return out
    out = Tensor(a.data * b.data, parents=(a, b))
    if out.requires_grad:
        def _bw(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))
        out._backward = _bw
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data / b.data, parents=(a, b))
    if out.requires_grad:
        def _bw(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))
        out._backward = _bw
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data @ b.data, parents=(a, b))
    if out.requires_grad:
        def _bw(g):
            if a.requires_grad:
                a._accumulate(g @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ g)
        out._backward = _bw
    return out


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.data.T, parents=(a,))
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(g.T)
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0), parents=(a,))
    if out.requires_grad:
        mask = a.data > 0
        out._backward = lambda g: a._accumulate(g * mask)
    return out


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    s[~pos] = e / (1.0 + e)
    out = Tensor(s, parents=(a,))
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(g * s * (1.0 - s))
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data), parents=(a,))
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(g / a.data)
    return out


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    out = Tensor(e, parents=(a,))
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(g * e)
    return out


def sqrt(a: Tensor) -> Tensor:
    r = np.sqrt(a.data)
    out = Tensor(r, parents=(a,))
    if out.requires_grad:
        def _bw(g):
            # subgradient 0 at the origin so exactly-zero norms stay finite
            safe = np.where(r > 0, 2.0 * r, 1.0)
            a._accumulate(np.where(r > 0, g / safe, 0.0))
        out._backward = _bw
    return out


def square(a: Tensor) -> Tensor:
    return mul(a, a)


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(np.asarray(a.data.sum()).reshape(()), parents=(a,))
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(np.broadcast_to(g, a.data.shape).copy())
    return out


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out = Tensor(np.asarray(a.data.mean()).reshape(()), parents=(a,))
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(np.broadcast_to(g / n, a.data.shape).copy())
    return out


def sum_axis(a: Tensor, axis: int, keepdims: bool = True) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), parents=(a,))
    if out.requires_grad:
        def _bw(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())
        out._backward = _bw
    return out


def mean_axis(a: Tensor, axis: int, keepdims: bool = True) -> Tensor:
    n = a.data.shape[axis]
    s = sum_axis(a, axis, keepdims)
    return mul(s, 1.0 / n)


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction; each output row is a simplex point."""
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    out = Tensor(p, parents=(a,))
    if out.requires_grad:
        def _bw(g):
            dot = (g * p).sum(axis=1, keepdims=True)
            a._accumulate(p * (g - dot))
        out._backward = _bw
    return out


def concat_cols(parts: list[Tensor]) -> Tensor:
    out = Tensor(np.concatenate([p.data for p in parts], axis=1), parents=tuple(parts))
    if out.requires_grad:
        widths = [p.data.shape[1] for p in parts]
        def _bw(g):
            j = 0
            for p, w in zip(parts, widths):
                if p.requires_grad:
                    p._accumulate(g[:, j:j + w])
                j += w
        out._backward = _bw
    return out


def concat_rows(parts: list[Tensor]) -> Tensor:
    out = Tensor(np.concatenate([p.data for p in parts], axis=0), parents=tuple(parts))
    if out.requires_grad:
        heights = [p.data.shape[0] for p in parts]
        def _bw(g):
            i = 0
            for p, h in zip(parts, heights):
                if p.requires_grad:
                    p._accumulate(g[i:i + h])
                i += h
        out._backward = _bw
    return out


def slice_rows(a: Tensor, i0: int, i1: int) -> Tensor:
    out = Tensor(a.data[i0:i1], parents=(a,))
    if out.requires_grad:
        def _bw(g):
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[i0:i1] += g
        out._backward = _bw
    return out


def slice_cols(a: Tensor, j0: int, j1: int) -> Tensor:
    out = Tensor(a.data[:, j0:j1], parents=(a,))
    if out.requires_grad:
        def _bw(g):
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[:, j0:j1] += g
        out._backward = _bw
    return out


def gather_rows(table: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows of a 2-D table; gradient accumulates only into selected rows."""
    out = Tensor(table.data[idx], parents=(table,))
    if out.requires_grad:
        def _bw(g):
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, idx, g)
        out._backward = _bw
    return out


def gather_mean(table: Tensor, values: np.ndarray, offsets: np.ndarray) -> Tensor:
    """Mean-pooled row lookup over ragged index lists.

    Sample ``i`` owns ``values[offsets[i]:offsets[i+1]]`` and receives the mean
    of those table rows. Singleton lists reduce to a plain row gather.
    """
    counts = np.diff(offsets)
    if np.any(counts < 1):
        raise ValueError("every sample needs at least one index")
    picked = table.data[values]
    if picked.shape[0] == offsets.shape[0] - 1:
        pooled = picked
        weights = None
    else:
        inv = (1.0 / counts).astype(picked.dtype)  # int division would promote dtype
        pooled = np.add.reduceat(picked, offsets[:-1], axis=0) * inv[:, None]
        weights = inv
    out = Tensor(pooled, parents=(table,))
    if out.requires_grad:
        def _bw(g):
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            if weights is None:
                np.add.at(table.grad, values, g)
            else:
                np.add.at(table.grad, values, np.repeat(g * weights[:, None], counts, axis=0))
        out._backward = _bw
    return out


def take_per_row(a: Tensor, idx: np.ndarray) -> Tensor:
    """Pick one entry per row: out[i] = a[i, idx[i]], shape (rows, 1)."""
    rows = np.arange(a.data.shape[0])
    out = Tensor(a.data[rows, idx][:, None], parents=(a,))
    if out.requires_grad:
        def _bw(g):
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[rows, idx] += g[:, 0]
        out._backward = _bw
    return out


def bce_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy straight from logits.

    Numerically stable softplus form; the gradient with respect to the logit
    is (sigmoid(logit) - label) / batch.
    """
    z = logits.data.reshape(-1)
    y = labels.astype(z.dtype)
    # log(1 + exp(-|z|)) + max(z, 0) - z*y
    loss_vec = np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0) - z * y
    val = np.asarray(loss_vec.mean()).reshape(())
    if not np.isfinite(val):
        raise NumericsError("non-finite training loss")
    out = Tensor(val, parents=(logits,))
    if out.requires_grad:
        def _bw(g):
            s = np.empty_like(z)
            pos = z >= 0
            s[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
            e = np.exp(z[~pos])
            s[~pos] = e / (1.0 + e)
            logits._accumulate(((s - y) * (g / z.size)).reshape(logits.data.shape))
        out._backward = _bw
    return out


def check_finite(arr: np.ndarray, context: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"non-finite values in {context}")
