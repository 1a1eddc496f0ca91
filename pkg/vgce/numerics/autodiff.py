"""
Reverse-mode gradient tape over dense 2-D float64 matrices.

Every value is a 2-D array; scalars are 1x1. A DiffNode records its parents
and a backward closure mapping the upstream gradient to one gradient per
parent. The tape is rebuilt on every forward pass.
"""

from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from vgce.core.exceptions import NotScalarError, ShapeError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class DiffNode:
    """A matrix value on the tape together with its accumulated gradient."""

    __slots__ = ("value", "grad", "requires_grad", "parents", "backward_fn", "op")

    def __init__(
        self,
        value: np.ndarray,
        requires_grad: bool = False,
        parents: Tuple["DiffNode", ...] = (),
        backward_fn: Optional[BackwardFn] = None,
        op: str = "leaf",
    ):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim == 0:
            value = value.reshape(1, 1)
        if value.ndim != 2:
            raise ShapeError(f"{op}: expected a 2-D value, got shape {value.shape}")
        self.value = value
        self.grad = np.zeros_like(value)
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise NotScalarError(f"item() on a {self.value.shape} node")
        return float(self.value[0, 0])

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"DiffNode(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"


def parameter(value: np.ndarray) -> DiffNode:
    """Trainable leaf; the array is copied."""
    return DiffNode(np.array(value, dtype=np.float64, copy=True), requires_grad=True)


def constant(value: np.ndarray) -> DiffNode:
    return DiffNode(value, requires_grad=False)


def _topological_order(root: DiffNode) -> List[DiffNode]:
    # Iterative DFS; recursion would overflow on long tapes.
    order: List[DiffNode] = []
    visited = set()
    stack: List[Tuple[DiffNode, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: DiffNode) -> None:
    """Populate ``grad`` of every leaf reachable from the scalar ``loss``.

    Leaf gradients accumulate across calls until ``zero_grad``; intermediate
    gradients live only for the duration of one call.
    """
    if loss.value.shape != (1, 1):
        raise NotScalarError(f"backward() needs a scalar loss, got shape {loss.value.shape}")
    if not loss.requires_grad:
        return

    upstream: Dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for node in reversed(_topological_order(loss)):
        g = upstream.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = node.grad + g
            continue
        parent_grads = node.backward_fn(g)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.value.shape:
                raise ShapeError(
                    f"{node.op}: gradient shape {pg.shape} does not match parent {parent.value.shape}"
                )
            key = id(parent)
            upstream[key] = upstream[key] + pg if key in upstream else pg


def zero_grad(nodes: Iterable[DiffNode]) -> None:
    for node in nodes:
        node.zero_grad()
