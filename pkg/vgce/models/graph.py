"""
Concept graph over state and object nodes.

Nodes are ordered states first, then objects. Edges come from seen training
compositions only and always join a state to an object.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import List, Tuple

import numpy as np
import scipy.sparse as sp
import structlog

from vgce.core.exceptions import ShapeMismatchError, VocabularyError
from vgce.models.concepts import ConceptVocabulary, DatasetSplits

logger = structlog.get_logger(__name__)


@dataclass(frozen=True)
class ConceptGraph:
    n_states: int
    n_objects: int
    adjacency: sp.csr_matrix
    node_features: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.n_states + self.n_objects

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.nnz // 2)

    @property
    def feature_dim(self) -> int:
        return self.node_features.shape[1]

    def edges(self) -> List[Tuple[int, int]]:
        """Undirected edges as (state node, object node), sorted."""
        coo = sp.triu(self.adjacency, k=1).tocoo()
        return sorted(zip(coo.row.tolist(), coo.col.tolist()))

    @cached_property
    def biadjacency(self) -> np.ndarray:
        """Dense |S| x |O| block of A as float64."""
        block = self.adjacency[: self.n_states, self.n_states:]
        return np.asarray(block.todense(), dtype=np.float64)

    @cached_property
    def aggregation(self) -> sp.csr_matrix:
        """Row-normalized adjacency D^-1 A; isolated nodes get an all-zero row."""
        degree = np.asarray(self.adjacency.sum(axis=1)).reshape(-1)
        inv = np.divide(1.0, degree, out=np.zeros_like(degree, dtype=np.float64), where=degree > 0)
        return (sp.diags(inv) @ self.adjacency.astype(np.float64)).tocsr()

    @cached_property
    def features64(self) -> np.ndarray:
        return self.node_features.astype(np.float64)

    def is_bipartite(self) -> bool:
        return all(i < self.n_states <= j for i, j in self.edges())


def adjacency_from_pairs(n_states: int, n_objects: int, pairs) -> sp.csr_matrix:
    """Symmetric 0/1 adjacency with one edge per (state, object) pair; repeats collapse."""
    n = n_states + n_objects
    unique = sorted({(int(s), int(o)) for s, o in pairs})
    rows = [s for s, _ in unique] + [n_states + o for _, o in unique]
    cols = [n_states + o for _, o in unique] + [s for s, _ in unique]
    data = np.ones(len(rows), dtype=np.float64)
    adj = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    adj.sort_indices()
    return adj


def build_graph(vocab: ConceptVocabulary, splits: DatasetSplits, node_features: np.ndarray) -> ConceptGraph:
    """One undirected edge per seen pair."""
    features = np.asarray(node_features, dtype=np.float32)
    if features.ndim != 2 or features.shape[0] != vocab.n_nodes:
        raise ShapeMismatchError(
            "node_features.bin",
            f"expected {vocab.n_nodes} rows (states then objects), got shape {features.shape}",
        )
    if not np.all(np.isfinite(features)):
        raise ShapeMismatchError("node_features.bin", "contains non-finite values")
    for label in splits.seen_pairs:
        label.check(vocab)
        if label in splits.unseen_pairs:
            raise VocabularyError(f"pair ({label.state_idx}, {label.object_idx}) is both seen and unseen")

    adjacency = adjacency_from_pairs(
        vocab.n_states, vocab.n_objects, [(p.state_idx, p.object_idx) for p in splits.seen_pairs]
    )
    features = features.copy()
    features.setflags(write=False)
    graph = ConceptGraph(vocab.n_states, vocab.n_objects, adjacency, features)
    logger.debug("concept graph built", nodes=graph.n_nodes, edges=graph.n_edges, feature_dim=graph.feature_dim)
    return graph
