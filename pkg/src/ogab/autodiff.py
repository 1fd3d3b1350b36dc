"""Dense float64 matrices with a reverse-mode gradient tape.

Values are plain 2-D numpy arrays. Every differentiable operation records a
node on a :class:`Tape`; ``Tape.backward`` walks the nodes in reverse
creation order and accumulates gradients into the leaves. A tape is meant to
live for a single training step and be discarded afterwards.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.special import expit

PIVOT_TOL = 1e-12


class ShapeError(ValueError):
    """Operands have incompatible dimensions."""


class SingularMatrixError(ArithmeticError):
    """A linear solve hit a pivot below the singularity threshold."""


class GraphError(RuntimeError):
    """A tape operation was used outside its contract."""


def as_matrix(value) -> np.ndarray:
    """Coerce to a 2-D float64 array; 1-D input becomes a single row."""
    a = np.asarray(value, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D array, got shape {a.shape}")
    return a


class Tensor:
    """A 2-D float64 value recorded on a tape.

    ``data`` is immutable by convention: operations always allocate fresh
    arrays. ``grad`` is filled by ``Tape.backward`` and has the same shape
    as ``data``.
    """

    __slots__ = ("tape", "id", "data", "grad", "requires_grad", "op", "_parents", "_rule")

    def __init__(self, tape, data, *, parents=(), rule=None, requires_grad=False, op="leaf"):
        self.tape = tape
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._rule = rule
        self.id = tape._register(self)

    @property
    def shape(self):
        return self.data.shape

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]

    def __repr__(self):
        return f"Tensor(id={self.id}, op={self.op!r}, shape={self.data.shape})"

    # -- operators ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def t(self):
        return transpose(self)

    def sum(self):
        return total(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)

    def softplus(self):
        return softplus(self)


class Tape:
    """Ordered record of operations for one forward/backward pass.

    Nodes are registered in creation order, so every parent id precedes its
    children; the backward pass visits ids in strictly decreasing order.
    """

    def __init__(self):
        self._nodes: list[Tensor] = []
        self._leaf_ids: list[int] = []

    def __len__(self):
        return len(self._nodes)

    def _register(self, node: Tensor) -> int:
        self._nodes.append(node)
        return len(self._nodes) - 1

    def leaf(self, value, requires_grad=True) -> Tensor:
        """Record a parameter (or input) node holding ``value``."""
        data = as_matrix(value)
        if not np.isfinite(data).all():
            raise ValueError("leaf value contains NaN or Inf")
        node = Tensor(self, data, requires_grad=requires_grad, op="leaf")
        if requires_grad:
            self._leaf_ids.append(node.id)
        return node

    def const(self, value) -> Tensor:
        """Record a non-trainable input node."""
        return self.leaf(value, requires_grad=False)

    def trainable_leaves(self) -> list[Tensor]:
        return [self._nodes[i] for i in self._leaf_ids]

    def backward(self, root: Tensor) -> None:
        """Accumulate d(root)/d(leaf) into every trainable leaf's ``grad``.

        Gradients are reset first, so repeated calls over the same graph
        produce identical results.
        """
        if root.tape is not self:
            raise GraphError("root was recorded on a different tape")
        if root.data.size != 1:
            raise GraphError(f"backward root must be scalar, got shape {root.data.shape}")
        for node in self._nodes:
            node.grad = None
        root.grad = np.ones((1, 1))
        for node in reversed(self._nodes):
            if node.grad is None or node._rule is None:
                continue
            node._rule(node.grad)
        for i in self._leaf_ids:
            leaf = self._nodes[i]
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _coerce_pair(a, b):
    if isinstance(a, Tensor):
        tape = a.tape
        if not isinstance(b, Tensor):
            b = tape.const(b)
    elif isinstance(b, Tensor):
        tape = b.tape
        a = tape.const(a)
    else:
        raise TypeError("at least one operand must be a Tensor")
    if a.tape is not b.tape:
        raise GraphError("operands live on different tapes")
    return a, b


def _check_broadcast(sa, sb, op_name):
    # Same shape, or a (1, k) row vector against (n, k).
    if sa == sb:
        return
    if sa[1] == sb[1] and (sa[0] == 1 or sb[0] == 1):
        return
    raise ShapeError(f"{op_name}: incompatible shapes {sa} and {sb}")


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.sum(axis=0, keepdims=True)


def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_broadcast(a.shape, b.shape, "add")
    out_data = a.data + b.data

    def rule(g):
        _accumulate(a, _reduce_to(g, a.data.shape))
        _accumulate(b, _reduce_to(g, b.data.shape))

    return Tensor(a.tape, out_data, parents=(a, b), rule=rule,
                  requires_grad=a.requires_grad or b.requires_grad, op="add")


def sub(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_broadcast(a.shape, b.shape, "sub")
    out_data = a.data - b.data

    def rule(g):
        _accumulate(a, _reduce_to(g, a.data.shape))
        _accumulate(b, _reduce_to(-g, b.data.shape))

    return Tensor(a.tape, out_data, parents=(a, b), rule=rule,
                  requires_grad=a.requires_grad or b.requires_grad, op="sub")


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_broadcast(a.shape, b.shape, "mul")
    out_data = a.data * b.data

    def rule(g):
        _accumulate(a, _reduce_to(g * b.data, a.data.shape))
        _accumulate(b, _reduce_to(g * a.data, b.data.shape))

    return Tensor(a.tape, out_data, parents=(a, b), rule=rule,
                  requires_grad=a.requires_grad or b.requires_grad, op="mul")


def neg(a: Tensor) -> Tensor:
    def rule(g):
        _accumulate(a, -g)

    return Tensor(a.tape, -a.data, parents=(a,), rule=rule,
                  requires_grad=a.requires_grad, op="neg")


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Multiply every row of ``x`` entrywise by the row vector ``s``."""
    if isinstance(s, Tensor):
        if s.rows != 1 or s.cols != x.cols:
            raise ShapeError(f"scale_rows: expected a (1, {x.cols}) vector, got {s.shape}")
    return mul(x, s)


def matmul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    if a.cols != b.rows:
        raise ShapeError(f"matmul: {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def rule(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return Tensor(a.tape, out_data, parents=(a, b), rule=rule,
                  requires_grad=a.requires_grad or b.requires_grad, op="matmul")


def transpose(a: Tensor) -> Tensor:
    def rule(g):
        _accumulate(a, g.T)

    return Tensor(a.tape, np.ascontiguousarray(a.data.T), parents=(a,), rule=rule,
                  requires_grad=a.requires_grad, op="transpose")


def total(a: Tensor) -> Tensor:
    """Sum of all entries, as a 1x1 tensor."""
    out_data = np.array([[a.data.sum()]])

    def rule(g):
        _accumulate(a, np.full(a.data.shape, g[0, 0]))

    return Tensor(a.tape, out_data, parents=(a,), rule=rule,
                  requires_grad=a.requires_grad, op="sum")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def rule(g):
        _accumulate(a, g * (1.0 - y * y))

    return Tensor(a.tape, y, parents=(a,), rule=rule, requires_grad=a.requires_grad, op="tanh")


def sigmoid(a: Tensor) -> Tensor:
    y = expit(a.data)

    def rule(g):
        _accumulate(a, g * y * (1.0 - y))

    return Tensor(a.tape, y, parents=(a,), rule=rule, requires_grad=a.requires_grad, op="sigmoid")


def relu(a: Tensor) -> Tensor:
    y = np.maximum(a.data, 0.0)

    def rule(g):
        # Subgradient at exactly 0 is 0.
        _accumulate(a, g * (a.data > 0.0))

    return Tensor(a.tape, y, parents=(a,), rule=rule, requires_grad=a.requires_grad, op="relu")


def softplus(a: Tensor) -> Tensor:
    y = np.logaddexp(0.0, a.data)

    def rule(g):
        _accumulate(a, g * expit(a.data))

    return Tensor(a.tape, y, parents=(a,), rule=rule, requires_grad=a.requires_grad, op="softplus")


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction for stability."""
    if not np.isfinite(a.data).all():
        raise ValueError("softmax input contains NaN or Inf")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def rule(g):
        inner = (g * y).sum(axis=1, keepdims=True)
        _accumulate(a, y * (g - inner))

    return Tensor(a.tape, y, parents=(a,), rule=rule, requires_grad=a.requires_grad, op="softmax")


def solve(a: Tensor, b: Tensor) -> Tensor:
    """Solve ``a @ X = b`` by LU with partial pivoting, differentiably.

    The LU factors are reused by the backward rule, which solves against the
    transpose instead of forming any explicit inverse.
    """
    a, b = _coerce_pair(a, b)
    if a.rows != a.cols:
        raise ShapeError(f"solve: coefficient matrix must be square, got {a.shape}")
    if a.rows != b.rows:
        raise ShapeError(f"solve: {a.shape} x {b.shape}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lu, piv = lu_factor(a.data, check_finite=False)
    if np.abs(np.diag(lu)).min() < PIVOT_TOL:
        raise SingularMatrixError(f"pivot below {PIVOT_TOL:g} during LU factorization")
    x = lu_solve((lu, piv), b.data, check_finite=False)

    def rule(g):
        gb = lu_solve((lu, piv), g, trans=1, check_finite=False)
        _accumulate(a, -gb @ x.T)
        _accumulate(b, gb)

    return Tensor(a.tape, x, parents=(a, b), rule=rule,
                  requires_grad=a.requires_grad or b.requires_grad, op="solve")


def cross_entropy_from_logits(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under row-softmax of logits.

    Computed through log-sum-exp; returns a 1x1 tensor.
    """
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.rows:
        raise ShapeError(f"labels must be a vector of length {logits.rows}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("labels must be integers")
    n, c = logits.shape
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"label out of range [0, {c})")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))
    picked = z[np.arange(n), labels]
    loss = float((lse[:, 0] - picked).mean())

    def rule(g):
        p = np.exp(z - lse)
        p[np.arange(n), labels] -= 1.0
        _accumulate(logits, p * (g[0, 0] / n))

    return Tensor(logits.tape, np.array([[loss]]), parents=(logits,), rule=rule,
                  requires_grad=logits.requires_grad, op="cross_entropy")
