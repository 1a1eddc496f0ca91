"""
Differentiable operations on DiffNode.

Each op checks operand shapes, checks that its output is finite, and records
a backward closure returning one gradient per parent. Plain arrays are
accepted wherever a node is and are treated as constants.
"""

from typing import Sequence, Union

import numpy as np
import scipy.sparse as sp
from scipy.special import expit, logsumexp

from vgce.core.exceptions import ShapeError, NonFiniteError
from vgce.numerics.autodiff import DiffNode

NodeLike = Union[DiffNode, np.ndarray, float]


def as_node(x: NodeLike) -> DiffNode:
    if isinstance(x, DiffNode):
        return x
    return DiffNode(np.asarray(x, dtype=np.float64))


def _make(op: str, value: np.ndarray, parents: Sequence[DiffNode], backward_fn) -> DiffNode:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(op)
    requires_grad = any(p.requires_grad for p in parents)
    return DiffNode(
        value,
        requires_grad=requires_grad,
        parents=tuple(parents) if requires_grad else (),
        backward_fn=backward_fn if requires_grad else None,
        op=op,
    )


def _same_shape(op: str, a: DiffNode, b: DiffNode) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# Linear algebra

def matmul(a: NodeLike, b: NodeLike) -> DiffNode:
    a, b = as_node(a), as_node(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value
    return _make("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def transpose(a: NodeLike) -> DiffNode:
    a = as_node(a)
    return _make("transpose", a.value.T.copy(), (a,), lambda g: (g.T,))


def aggregate(matrix: sp.spmatrix, x: NodeLike) -> DiffNode:
    """Constant sparse matrix times a node (neighbour aggregation)."""
    x = as_node(x)
    if matrix.shape[1] != x.shape[0]:
        raise ShapeError(f"aggregate: cannot multiply {matrix.shape} by {x.shape}")
    m = sp.csr_matrix(matrix)
    mt = m.T.tocsr()
    return _make("aggregate", np.asarray(m @ x.value), (x,), lambda g: (np.asarray(mt @ g),))


# Elementwise arithmetic

def add(a: NodeLike, b: NodeLike) -> DiffNode:
    a, b = as_node(a), as_node(b)
    _same_shape("add", a, b)
    return _make("add", a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: NodeLike, b: NodeLike) -> DiffNode:
    a, b = as_node(a), as_node(b)
    _same_shape("sub", a, b)
    return _make("sub", a.value - b.value, (a, b), lambda g: (g, -g))


def elementwise_mul(a: NodeLike, b: NodeLike) -> DiffNode:
    a, b = as_node(a), as_node(b)
    _same_shape("elementwise_mul", a, b)
    av, bv = a.value, b.value
    return _make("elementwise_mul", av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: NodeLike, c: float) -> DiffNode:
    a = as_node(a)
    c = float(c)
    return _make("scale", a.value * c, (a,), lambda g: (g * c,))


def add_scalar(a: NodeLike, c: float) -> DiffNode:
    a = as_node(a)
    return _make("add_scalar", a.value + float(c), (a,), lambda g: (g,))


def add_bias(x: NodeLike, bias: NodeLike) -> DiffNode:
    """Add a 1 x cols row to every row of x."""
    x, bias = as_node(x), as_node(bias)
    if bias.shape != (1, x.shape[1]):
        raise ShapeError(f"add_bias: bias {bias.shape} does not broadcast over {x.shape}")
    return _make("add_bias", x.value + bias.value, (x, bias), lambda g: (g, g.sum(axis=0, keepdims=True)))


def concat_cols(*nodes: NodeLike) -> DiffNode:
    parts = [as_node(n) for n in nodes]
    if not parts:
        raise ShapeError("concat_cols: nothing to concatenate")
    rows = parts[0].shape[0]
    if any(p.shape[0] != rows for p in parts):
        raise ShapeError(f"concat_cols: row counts differ {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def backward_fn(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _make("concat_cols", np.concatenate([p.value for p in parts], axis=1), parts, backward_fn)


# Nonlinearities

def relu(x: NodeLike) -> DiffNode:
    x = as_node(x)
    active = x.value > 0
    return _make("relu", np.where(active, x.value, 0.0), (x,), lambda g: (g * active,))


def sigmoid(x: NodeLike) -> DiffNode:
    x = as_node(x)
    s = expit(x.value)
    return _make("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def exp(x: NodeLike) -> DiffNode:
    x = as_node(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.value)
    return _make("exp", out, (x,), lambda g: (g * out,))


def log(x: NodeLike) -> DiffNode:
    x = as_node(x)
    xv = x.value
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(xv)
    return _make("log", out, (x,), lambda g: (g / xv,))


def softplus(x: NodeLike) -> DiffNode:
    """log(1 + e^x) without overflow."""
    x = as_node(x)
    xv = x.value
    return _make("softplus", np.logaddexp(0.0, xv), (x,), lambda g: (g * expit(xv),))


def clamp(x: NodeLike, low: float, high: float) -> DiffNode:
    x = as_node(x)
    inside = (x.value > low) & (x.value < high)
    return _make("clamp", np.clip(x.value, low, high), (x,), lambda g: (g * inside,))


def softmax_rows(x: NodeLike) -> DiffNode:
    x = as_node(x)
    shifted = x.value - x.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def backward_fn(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _make("softmax_rows", s, (x,), backward_fn)


def log_softmax_rows(x: NodeLike) -> DiffNode:
    x = as_node(x)
    out = x.value - logsumexp(x.value, axis=1, keepdims=True)
    s = np.exp(out)

    def backward_fn(g):
        return (g - s * g.sum(axis=1, keepdims=True),)

    return _make("log_softmax_rows", out, (x,), backward_fn)


def row_l2_normalize(x: NodeLike, eps: float = 1e-12) -> DiffNode:
    x = as_node(x)
    norms = np.sqrt((x.value ** 2).sum(axis=1, keepdims=True))
    denom = np.maximum(norms, eps)
    y = x.value / denom
    clipped = norms <= eps

    def backward_fn(g):
        projected = (g - y * (g * y).sum(axis=1, keepdims=True)) / denom
        return (np.where(clipped, g / denom, projected),)

    return _make("row_l2_normalize", y, (x,), backward_fn)


# Reductions and indexing

def reduce_sum(x: NodeLike) -> DiffNode:
    x = as_node(x)
    shape = x.shape
    return _make("reduce_sum", np.array([[x.value.sum()]]), (x,), lambda g: (np.full(shape, g[0, 0]),))


def reduce_mean(x: NodeLike) -> DiffNode:
    x = as_node(x)
    shape = x.shape
    n = x.value.size
    if n == 0:
        raise ShapeError("reduce_mean: empty input")
    return _make(
        "reduce_mean", np.array([[x.value.sum() / n]]), (x,), lambda g: (np.full(shape, g[0, 0] / n),)
    )


def take_rows(x: NodeLike, index: Sequence[int]) -> DiffNode:
    """Gather rows; repeated indices are allowed and their gradients add up."""
    x = as_node(x)
    idx = np.asarray(index, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ShapeError(f"take_rows: index out of range for {x.shape[0]} rows")
    shape = x.shape

    def backward_fn(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _make("take_rows", x.value[idx], (x,), backward_fn)


def select_entries(x: NodeLike, rows: Sequence[int], cols: Sequence[int]) -> DiffNode:
    """Column vector of x[rows[i], cols[i]]."""
    x = as_node(x)
    r = np.asarray(rows, dtype=np.int64).reshape(-1)
    c = np.asarray(cols, dtype=np.int64).reshape(-1)
    if r.shape != c.shape:
        raise ShapeError("select_entries: row and column index lengths differ")
    if r.size and (r.min() < 0 or r.max() >= x.shape[0] or c.min() < 0 or c.max() >= x.shape[1]):
        raise ShapeError(f"select_entries: index out of range for {x.shape}")
    shape = x.shape

    def backward_fn(g):
        out = np.zeros(shape)
        np.add.at(out, (r, c), g[:, 0])
        return (out,)

    return _make("select_entries", x.value[r, c].reshape(-1, 1), (x,), backward_fn)
