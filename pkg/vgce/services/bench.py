#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Graph Size Benchmark
Primitive-only concept graph versus a graph that also carries one node per composition
"""

import os
import time
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import psutil
import scipy.sparse as sp
import structlog

from vgce.core.seeding import stream
from vgce.models.graph import adjacency_from_pairs
from vgce.models.params import EncoderParams
from vgce.numerics import ops
from vgce.numerics.autodiff import backward, constant
from vgce.services import vgae

logger = structlog.get_logger(__name__)


@dataclass(frozen=True)
class DatasetShape:
    name: str
    n_states: int
    n_objects: int
    pairs_closed_world: int
    seen_pairs: int

    @property
    def n_nodes(self) -> int:
        return self.n_states + self.n_objects

    @property
    def pairs_open_world(self) -> int:
        return self.n_states * self.n_objects


PRESETS: Dict[str, DatasetShape] = {
    "mit-states": DatasetShape("mit-states", 115, 245, 1962, 1262),
    "ut-zappos": DatasetShape("ut-zappos", 16, 12, 116, 83),
    "cgqa": DatasetShape("cgqa", 453, 870, 9378, 5592),
}


@dataclass
class BenchRow:
    name: str
    n_states: int
    n_objects: int
    pairs_cw: int
    pairs_ow: int
    n_nodes: int
    n_cge_cw: int
    n_cge_ow: int
    cost_ratio_cw: float
    cost_ratio_ow: float
    memory_ratio_ow: float
    primitive_ms: Optional[float] = None
    cge_ow_ms: Optional[float] = None
    primitive_rss_mb: Optional[float] = None
    cge_ow_rss_mb: Optional[float] = None


def _rss_mb() -> float:
    return psutil.Process(os.getpid()).memory_info().rss / (1024 * 1024)


def _primitive_graph(shape: DatasetShape, rng: np.random.Generator) -> sp.csr_matrix:
    total = shape.pairs_open_world
    chosen = rng.choice(total, size=min(shape.seen_pairs, total), replace=False)
    return adjacency_from_pairs(shape.n_states, shape.n_objects, [divmod(int(c), shape.n_objects) for c in chosen])


def _composition_graph(shape: DatasetShape) -> sp.csr_matrix:
    """Primitive nodes plus one node per open-world pair, linked to its state and its object."""
    n_prim = shape.n_nodes
    n_pairs = shape.pairs_open_world
    n = n_prim + n_pairs
    pair_nodes = n_prim + np.arange(n_pairs)
    states = np.repeat(np.arange(shape.n_states), shape.n_objects)
    objects = shape.n_states + np.tile(np.arange(shape.n_objects), shape.n_states)
    rows = np.concatenate([pair_nodes, states, pair_nodes, objects])
    cols = np.concatenate([states, pair_nodes, objects, pair_nodes])
    return sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))


def _row_normalize(adjacency: sp.csr_matrix) -> sp.csr_matrix:
    degree = np.asarray(adjacency.sum(axis=1)).reshape(-1)
    inv = np.divide(1.0, degree, out=np.zeros_like(degree, dtype=np.float64), where=degree > 0)
    return (sp.diags(inv) @ adjacency).tocsr()


def time_encoder_epoch(adjacency: sp.csr_matrix, m: int, hidden: int, h: int, layers: int, rng: np.random.Generator, repeats: int = 1):
    """Best-of-``repeats`` wall time (ms) and RSS delta (MB) of one encoder forward + backward."""
    n = adjacency.shape[0]
    aggregation = _row_normalize(adjacency)
    features = rng.standard_normal((n, m)) / np.sqrt(m)
    params = EncoderParams.init(rng, m, hidden, layers, h)
    best_ms = float("inf")
    rss_delta = 0.0
    for _ in range(max(1, repeats)):
        before = _rss_mb()
        started = time.perf_counter()
        post = vgae.encode_features(constant(features), aggregation, params)
        loss = ops.reduce_sum(ops.elementwise_mul(post.mu, post.mu))
        backward(loss)
        elapsed = (time.perf_counter() - started) * 1000.0
        rss_delta = max(rss_delta, _rss_mb() - before)
        best_ms = min(best_ms, elapsed)
        for _, node in params.named_parameters():
            node.zero_grad()
    return best_ms, rss_delta


def bench_graph(
    shapes: Sequence[DatasetShape],
    m: int = 16,
    hidden: int = 16,
    h: int = 8,
    layers: int = 2,
    seed: int = 0,
    measure: bool = True,
    repeats: int = 1,
) -> List[BenchRow]:
    if not shapes:
        raise ValueError("bench_graph needs at least one dataset shape")
    rng = stream(seed, "bench")
    rows = []
    for shape in shapes:
        n = shape.n_nodes
        n_cw = n + shape.pairs_closed_world
        n_ow = n + shape.pairs_open_world
        row = BenchRow(
            name=shape.name,
            n_states=shape.n_states,
            n_objects=shape.n_objects,
            pairs_cw=shape.pairs_closed_world,
            pairs_ow=shape.pairs_open_world,
            n_nodes=n,
            n_cge_cw=n_cw,
            n_cge_ow=n_ow,
            cost_ratio_cw=n_cw / n,
            cost_ratio_ow=n_ow / n,
            memory_ratio_ow=(layers * n_ow * m + layers * m * m) / (layers * n * m + layers * m * m),
        )
        if measure:
            row.primitive_ms, row.primitive_rss_mb = time_encoder_epoch(
                _primitive_graph(shape, rng), m, hidden, h, layers, rng, repeats
            )
            row.cge_ow_ms, row.cge_ow_rss_mb = time_encoder_epoch(
                _composition_graph(shape), m, hidden, h, layers, rng, repeats
            )
        logger.info("graph benchmarked", **{k: v for k, v in asdict(row).items() if v is not None})
        rows.append(row)
    return rows


def bench_frame(rows: Sequence[BenchRow]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in rows])
