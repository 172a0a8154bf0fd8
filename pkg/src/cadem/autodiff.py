"""Minimal reverse-mode automatic differentiation over dense 2-D float64 arrays.

Every :class:`Value` wraps a 2-D array and remembers the operation that
produced it.  Calling :func:`backward` on a 1x1 value walks the graph in
reverse topological order and accumulates gradients into every reachable
value that requires them.

Only the operations needed by the GCN encoders, projection layers, softmax
heads and the attention combiner are provided.  Broadcasting is limited to
row vectors (1 x n) and column vectors (m x 1) against full matrices.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Value",
    "SparseMatrix",
    "ShapeError",
    "parameter",
    "constant",
    "matmul",
    "sparse_dense_matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "sum_all",
    "mean_all",
    "frobenius_sq",
    "concat_cols",
    "concat_rows",
    "column",
    "col_slice",
    "take_rows",
    "row_dot",
    "row_softmax",
    "dropout",
    "softmax_cross_entropy",
    "backward",
    "Adam",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class Value:
    """A node of the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple["Value", ...] = (), _op: str = ""):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"Value must be 2-D, got shape {arr.shape}")
        self.data = arr
        # intermediate gradients are allocated by backward() and freed after use
        self.grad = np.zeros_like(arr) if requires_grad and not _parents else None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward: Callable[[], None] | None = None
        self._op = _op

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 value, got {self.data.shape}")
        return float(self.data[0, 0])

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Value{label}(shape={self.shape}, op={self._op or 'leaf'})"

    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))


def _wrap(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def parameter(data, name: str | None = None) -> Value:
    return Value(np.array(data, dtype=np.float64, copy=True), requires_grad=True, name=name)


def constant(data) -> Value:
    return Value(data)


def _result(data: np.ndarray, parents: tuple[Value, ...], op: str) -> Value:
    out = Value(data, requires_grad=any(p.requires_grad for p in parents), _parents=parents, _op=op)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def _check_broadcast(a: Value, b: Value, op: str) -> None:
    for sa, sb in zip(a.shape, b.shape):
        if sa != sb and sa != 1 and sb != 1:
            raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}")


class SparseMatrix:
    """Constant sparse matrix in coordinate form.

    Duplicate coordinates are rejected.  Multiplication goes through a cached
    CSR copy.
    """

    def __init__(self, n_rows: int, n_cols: int, rows, cols, weights):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        weights = np.asarray(weights, dtype=np.float64).ravel()
        if not (rows.shape == cols.shape == weights.shape):
            raise ShapeError("rows, cols and weights must have equal length")
        if rows.size:
            if rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols:
                raise IndexError(f"sparse entry out of bounds for shape ({n_rows}, {n_cols})")
            keys = rows * n_cols + cols
            if np.unique(keys).size != keys.size:
                raise ValueError("duplicate (row, col) entries in sparse matrix")
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self.rows = rows
        self.cols = cols
        self.weights = weights
        self._csr: sp.csr_matrix | None = None
        self._csr_t: sp.csr_matrix | None = None

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        idx = np.arange(n)
        return cls(n, n, idx, idx, np.ones(n))

    @classmethod
    def from_scipy(cls, mat) -> "SparseMatrix":
        coo = sp.coo_matrix(mat)
        coo.sum_duplicates()
        return cls(coo.shape[0], coo.shape[1], coo.row, coo.col, coo.data)

    @classmethod
    def from_dense(cls, dense) -> "SparseMatrix":
        dense = np.asarray(dense, dtype=np.float64)
        r, c = np.nonzero(dense)
        return cls(dense.shape[0], dense.shape[1], r, c, dense[r, c])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.weights.size)

    @property
    def csr(self) -> sp.csr_matrix:
        if self._csr is None:
            self._csr = sp.csr_matrix((self.weights, (self.rows, self.cols)), shape=self.shape)
        return self._csr

    @property
    def csr_t(self) -> sp.csr_matrix:
        if self._csr_t is None:
            self._csr_t = self.csr.T.tocsr()
        return self._csr_t

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.rows, self.cols] = self.weights
        return out

    def is_symmetric(self) -> bool:
        if self.n_rows != self.n_cols:
            return False
        diff = self.csr - self.csr.T
        return diff.nnz == 0 or float(np.abs(diff.data).max()) == 0.0

    def __repr__(self) -> str:
        return f"SparseMatrix(shape={self.shape}, nnz={self.nnz})"


def matmul(a: Value, b: Value) -> Value:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out = _result(a.data @ b.data, (a, b), "matmul")

    def _bw():
        if a.requires_grad:
            a.grad += out.grad @ b.data.T
        if b.requires_grad:
            b.grad += a.data.T @ out.grad

    out._backward = _bw
    return out


def sparse_dense_matmul(s: SparseMatrix, x: Value) -> Value:
    """``s @ x`` with a constant sparse left operand."""
    if s.n_cols != x.shape[0]:
        raise ShapeError(f"sparse_dense_matmul: {s.shape} @ {x.shape}")
    out = _result(np.asarray(s.csr @ x.data), (x,), "spmm")

    def _bw():
        if x.requires_grad:
            x.grad += np.asarray(s.csr_t @ out.grad)

    out._backward = _bw
    return out


def add(a: Value, b: Value) -> Value:
    _check_broadcast(a, b, "add")
    out = _result(a.data + b.data, (a, b), "add")

    def _bw():
        if a.requires_grad:
            a.grad += _unbroadcast(out.grad, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(out.grad, b.shape)

    out._backward = _bw
    return out


def sub(a: Value, b: Value) -> Value:
    _check_broadcast(a, b, "sub")
    out = _result(a.data - b.data, (a, b), "sub")

    def _bw():
        if a.requires_grad:
            a.grad += _unbroadcast(out.grad, a.shape)
        if b.requires_grad:
            b.grad -= _unbroadcast(out.grad, b.shape)

    out._backward = _bw
    return out


def mul(a: Value, b: Value) -> Value:
    """Elementwise product with row/column broadcasting."""
    _check_broadcast(a, b, "mul")
    out = _result(a.data * b.data, (a, b), "mul")

    def _bw():
        if a.requires_grad:
            a.grad += _unbroadcast(out.grad * b.data, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(out.grad * a.data, b.shape)

    out._backward = _bw
    return out


def scale(a: Value, c: float) -> Value:
    out = _result(a.data * c, (a,), "scale")

    def _bw():
        if a.requires_grad:
            a.grad += out.grad * c

    out._backward = _bw
    return out


def relu(a: Value) -> Value:
    mask = a.data > 0
    out = _result(np.where(mask, a.data, 0.0), (a,), "relu")

    def _bw():
        if a.requires_grad:
            a.grad += out.grad * mask

    out._backward = _bw
    return out


def sum_all(a: Value) -> Value:
    out = _result(np.array([[a.data.sum()]]), (a,), "sum")

    def _bw():
        if a.requires_grad:
            a.grad += out.grad[0, 0]

    out._backward = _bw
    return out


def mean_all(a: Value) -> Value:
    n = a.data.size
    out = _result(np.array([[a.data.mean()]]), (a,), "mean")

    def _bw():
        if a.requires_grad:
            a.grad += out.grad[0, 0] / n

    out._backward = _bw
    return out


def frobenius_sq(a: Value) -> Value:
    out = _result(np.array([[np.sum(a.data * a.data)]]), (a,), "frob2")

    def _bw():
        if a.requires_grad:
            a.grad += 2.0 * out.grad[0, 0] * a.data

    out._backward = _bw
    return out


def concat_cols(values: Sequence[Value]) -> Value:
    values = list(values)
    if not values:
        raise ShapeError("concat_cols needs at least one value")
    n = values[0].shape[0]
    if any(v.shape[0] != n for v in values):
        raise ShapeError("concat_cols: row counts differ")
    widths = [v.shape[1] for v in values]
    out = _result(np.concatenate([v.data for v in values], axis=1), tuple(values), "concat")
    offsets = np.cumsum([0] + widths)

    def _bw():
        for v, lo, hi in zip(values, offsets[:-1], offsets[1:]):
            if v.requires_grad:
                v.grad += out.grad[:, lo:hi]

    out._backward = _bw
    return out


def concat_rows(values: Sequence[Value]) -> Value:
    values = list(values)
    if not values:
        raise ShapeError("concat_rows needs at least one value")
    n = values[0].shape[1]
    if any(v.shape[1] != n for v in values):
        raise ShapeError("concat_rows: column counts differ")
    heights = [v.shape[0] for v in values]
    out = _result(np.concatenate([v.data for v in values], axis=0), tuple(values), "concat_rows")
    offsets = np.cumsum([0] + heights)

    def _bw():
        for v, lo, hi in zip(values, offsets[:-1], offsets[1:]):
            if v.requires_grad:
                v.grad += out.grad[lo:hi]

    out._backward = _bw
    return out


def column(a: Value, j: int) -> Value:
    """Column ``j`` as an m x 1 value."""
    out = _result(a.data[:, j:j + 1].copy(), (a,), "column")

    def _bw():
        if a.requires_grad:
            a.grad[:, j:j + 1] += out.grad

    out._backward = _bw
    return out


def col_slice(a: Value, lo: int, hi: int) -> Value:
    """Columns ``lo:hi``."""
    if not 0 <= lo < hi <= a.shape[1]:
        raise ShapeError(f"col_slice [{lo}:{hi}] out of range for {a.shape}")
    out = _result(a.data[:, lo:hi].copy(), (a,), "col_slice")

    def _bw():
        if a.requires_grad:
            a.grad[:, lo:hi] += out.grad

    out._backward = _bw
    return out


def take_rows(a: Value, index) -> Value:
    """Gather rows ``a[index]``; repeated indices accumulate in backward."""
    index = np.asarray(index, dtype=np.int64)
    out = _result(a.data[index], (a,), "take_rows")

    def _bw():
        if a.requires_grad:
            np.add.at(a.grad, index, out.grad)

    out._backward = _bw
    return out


def row_dot(a: Value, b: Value) -> Value:
    """Per-row inner products, returns m x 1."""
    if a.shape != b.shape:
        raise ShapeError(f"row_dot: {a.shape} vs {b.shape}")
    out = _result(np.sum(a.data * b.data, axis=1, keepdims=True), (a, b), "row_dot")

    def _bw():
        if a.requires_grad:
            a.grad += out.grad * b.data
        if b.requires_grad:
            b.grad += out.grad * a.data

    out._backward = _bw
    return out


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def row_softmax(a: Value) -> Value:
    s = _softmax_rows(a.data)
    out = _result(s, (a,), "softmax")

    def _bw():
        if a.requires_grad:
            g = out.grad
            a.grad += s * (g - np.sum(g * s, axis=1, keepdims=True))

    out._backward = _bw
    return out


def dropout(a: Value, p: float, rng: np.random.Generator, train: bool = True) -> Value:
    """Inverted dropout; identity when ``train`` is False or ``p`` is 0."""
    if not train or p <= 0.0:
        return a
    if p >= 1.0:
        raise ValueError("dropout probability must be < 1")
    mask = (rng.random(a.shape) >= p) / (1.0 - p)
    return mul(a, Value(mask))


LOG_FLOOR = 1e-12


def softmax_cross_entropy(logits: Value, targets) -> Value:
    """Mean over rows of ``-sum_k y_k log softmax(logits)_k``."""
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != logits.shape:
        raise ShapeError(f"targets {y.shape} do not match logits {logits.shape}")
    if logits.shape[1] < 2:
        raise ValueError("softmax_cross_entropy needs at least 2 classes")
    b = logits.shape[0]
    s = _softmax_rows(logits.data)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_s = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_s = np.maximum(log_s, math.log(LOG_FLOOR))
    loss = -np.sum(y * log_s) / b
    out = _result(np.array([[loss]]), (logits,), "softmax_ce")

    def _bw():
        if logits.requires_grad:
            logits.grad += out.grad[0, 0] * (s * y.sum(axis=1, keepdims=True) - y) / b

    out._backward = _bw
    return out


def _topo_order(root: Value) -> list[Value]:
    order: list[Value] = []
    seen: set[int] = set()
    stack: list[tuple[Value, bool]] = [(root, False)]
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
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Value, retain_graph: bool = False) -> None:
    """Populate ``grad`` on every value reachable from ``loss``.

    Leaf parameters accumulate on top of whatever they already hold, so
    callers zero them between steps.  Intermediate gradients only live while
    they are being propagated and are ``None`` afterwards, which keeps peak
    memory near the size of the forward graph.

    Unless ``retain_graph`` is set the graph is released afterwards: each
    op closure refers to its own output, and leaving those cycles to the
    cyclic collector lets large intermediates pile up across steps.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar (1x1) loss, got {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    for node in order:
        if node._parents:
            node.grad = None
    loss.grad = np.ones((1, 1))
    for node in reversed(order):
        if node._backward is not None:
            for p in node._parents:
                if p.requires_grad and p.grad is None:
                    p.grad = np.zeros_like(p.data)
            node._backward()
        if node._parents:
            node.grad = None
            if not retain_graph:
                node._backward = None
                node._parents = ()


class Adam:
    """Adam over named parameter groups.

    Each group is a dict with keys ``params`` (list of Values), ``lr`` and
    ``weight_decay``.  Weight decay is added to the gradient (L2 form).
    """

    def __init__(self, groups: Iterable[dict], betas=(0.9, 0.999), eps: float = 1e-8):
        self.groups = []
        for g in groups:
            params = list(g["params"])
            self.groups.append({
                "params": params,
                "lr": float(g["lr"]),
                "weight_decay": float(g.get("weight_decay", 0.0)),
            })
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = {id(p): np.zeros_like(p.data) for g in self.groups for p in g["params"]}
        self._v = {id(p): np.zeros_like(p.data) for g in self.groups for p in g["params"]}

    @property
    def params(self) -> list[Value]:
        return [p for g in self.groups for p in g["params"]]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(f"non-finite gradient in parameter {p.name!r}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for g in self.groups:
            lr, wd = g["lr"], g["weight_decay"]
            for p in g["params"]:
                grad = p.grad + wd * p.data if wd else p.grad
                m = self._m[id(p)]
                v = self._v[id(p)]
                m *= b1
                m += (1.0 - b1) * grad
                v *= b2
                v += (1.0 - b2) * grad * grad
                p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t}
