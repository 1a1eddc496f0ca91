#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Generalized Compositional Zero-Shot Evaluation
Image-to-pair scoring, feasibility masking, bias sweep metrics and tau calibration
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import structlog
from threadpoolctl import threadpool_limits

from vgce.core.exceptions import EvaluationError, ShapeError
from vgce.models.concepts import CompositionLabel, Split, World, output_space, pair_columns
from vgce.models.graph import ConceptGraph, build_graph
from vgce.models.params import ModelParams
from vgce.numerics.autodiff import DiffNode, constant
from vgce.schemas.config import RunConfig
from vgce.services import vgae
from vgce.services.composer import pair_embeddings
from vgce.services.dataset_io import Dataset

logger = structlog.get_logger(__name__)

SCORE_BLOCK_ROWS = 256


@dataclass
class ScoreMatrix:
    scores: np.ndarray                      # images x pairs
    pair_index: Tuple[CompositionLabel, ...]
    seen_mask: np.ndarray                   # per column, pair in Y_s

    def __post_init__(self):
        self.pair_index = tuple(self.pair_index)
        self.seen_mask = np.asarray(self.seen_mask, dtype=bool)
        if self.scores.ndim != 2 or self.scores.shape[1] != len(self.pair_index):
            raise ShapeError(f"score matrix {self.scores.shape} does not match {len(self.pair_index)} pairs")
        if self.seen_mask.shape != (len(self.pair_index),):
            raise ShapeError("seen mask must have one entry per column")

    @property
    def n_images(self) -> int:
        return self.scores.shape[0]

    def columns_of(self, labels: Sequence[CompositionLabel]) -> np.ndarray:
        lookup = pair_columns(self.pair_index)
        try:
            return np.array([lookup[lbl] for lbl in labels], dtype=np.int64)
        except KeyError as e:
            lbl = e.args[0]
            raise EvaluationError(f"label ({lbl.state_idx}, {lbl.object_idx}) is not a column of the score matrix") from e


@dataclass
class FeasibilityMask:
    xi: np.ndarray  # |S| x |O| bool
    tau: float

    @property
    def n_feasible(self) -> int:
        return int(self.xi.sum())


@dataclass
class BiasPoint:
    bias: float
    seen_acc: float
    unseen_acc: float
    hm: float


@dataclass
class EvalReport:
    curve: List[BiasPoint]
    auc: float
    best_hm: float
    best_seen: float
    best_unseen: float
    state_acc: float
    object_acc: float
    best_hm_bias: float
    world: str = World.CLOSED.value
    tau_used: Optional[float] = None
    n_images: int = 0
    n_candidates: int = 0
    feasible_pairs: Optional[int] = None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["best_hm_bias"] = _bias_repr(self.best_hm_bias)
        for point in out["curve"]:
            point["bias"] = _bias_repr(point["bias"])
        return out

    def curve_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(p.bias, p.seen_acc, p.unseen_acc) for p in self.curve],
            columns=["bias", "seen_acc", "unseen_acc"],
        )


def _bias_repr(bias: float):
    if math.isinf(bias):
        return "inf" if bias > 0 else "-inf"
    return bias


# Scoring

def project_pairs(params: ModelParams, z: DiffNode, pairs: Sequence[CompositionLabel], n_states: int) -> np.ndarray:
    return params.projection.phi_e.forward(pair_embeddings(z, pairs, n_states)).value


def project_images(params: ModelParams, features: np.ndarray) -> np.ndarray:
    return params.projection.phi_i.forward(constant(features)).value


def posterior_means(params: ModelParams, graph: ConceptGraph) -> DiffNode:
    return vgae.encode(graph, params.encoder).mu


def _row_blocks(n: int, size: int) -> List[slice]:
    return [slice(i, min(i + size, n)) for i in range(0, n, size)]


def score_images(
    params: ModelParams,
    graph: ConceptGraph,
    features: np.ndarray,
    pairs: Sequence[CompositionLabel],
    seen_mask: np.ndarray,
    threads: int = 1,
    block_rows: int = SCORE_BLOCK_ROWS,
) -> ScoreMatrix:
    """kappa(phi_e(e), phi_i(x)) for every image and candidate pair, using posterior means.

    Rows are scored in fixed-size blocks with single-threaded BLAS, so the
    result does not depend on ``threads``.
    """
    projected_pairs = project_pairs(params, posterior_means(params, graph), pairs, graph.n_states)
    features = np.asarray(features, dtype=np.float64)
    pairs_t = projected_pairs.T.copy()

    def score_block(rows: slice) -> np.ndarray:
        return project_images(params, features[rows]) @ pairs_t

    blocks = _row_blocks(features.shape[0], block_rows)
    with threadpool_limits(limits=1):
        if threads > 1 and len(blocks) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(score_block, blocks))
        else:
            parts = [score_block(b) for b in blocks]
    scores = np.concatenate(parts, axis=0) if parts else np.zeros((0, len(pairs)))
    return ScoreMatrix(scores=scores, pair_index=tuple(pairs), seen_mask=seen_mask)


# Feasibility

def feasibility_scores(z, n_states: int, n_objects: int) -> np.ndarray:
    """Decoded edge probabilities; pass posterior means for deterministic output."""
    node = z if isinstance(z, DiffNode) else constant(z)
    return vgae.decode_edges(node, n_states, n_objects).value


def feasibility_mask(edge_probs: np.ndarray, tau: float, seen_pairs: Iterable[CompositionLabel] = ()) -> FeasibilityMask:
    if not 0.0 <= tau <= 1.0:
        raise EvaluationError(f"tau must lie in [0, 1], got {tau}")
    xi = np.asarray(edge_probs) >= tau
    for pair in seen_pairs:
        xi[pair.state_idx, pair.object_idx] = True
    return FeasibilityMask(xi=xi, tau=float(tau))


def apply_feasibility(scores: ScoreMatrix, mask: FeasibilityMask) -> ScoreMatrix:
    """Infeasible, unseen columns get -inf."""
    feasible = np.array([mask.xi[p.state_idx, p.object_idx] for p in scores.pair_index], dtype=bool)
    feasible |= scores.seen_mask
    masked = np.where(feasible[None, :], scores.scores, -np.inf)
    return ScoreMatrix(scores=masked, pair_index=scores.pair_index, seen_mask=scores.seen_mask)


# Bias sweep

def predict_at_bias(scores: np.ndarray, seen_mask: np.ndarray, bias: float) -> np.ndarray:
    """Argmax column per image after adding ``bias`` to unseen columns; ties go to the lowest column."""
    unseen = ~seen_mask
    if bias == -math.inf:
        adjusted = np.where(unseen[None, :], -np.inf, scores) if seen_mask.any() else scores
    elif bias == math.inf:
        adjusted = np.where(seen_mask[None, :], -np.inf, scores) if unseen.any() else scores
    else:
        adjusted = np.where(unseen[None, :], scores + bias, scores)
    return np.argmax(adjusted, axis=1)


def bias_candidates(scores: ScoreMatrix, true_cols: np.ndarray, n_bias_points: int) -> List[float]:
    """Biases at which unseen-labelled images flip from a seen to an unseen prediction.

    The sorted distinct finite gaps (best seen score minus best unseen score)
    over unseen-labelled images, evenly subsampled to ``n_bias_points`` and
    bracketed by -inf and +inf.
    """
    seen, unseen = scores.seen_mask, ~scores.seen_mask
    thresholds: np.ndarray = np.zeros(0)
    unseen_images = unseen[true_cols]
    if seen.any() and unseen.any() and unseen_images.any():
        sub = scores.scores[unseen_images]
        with np.errstate(invalid="ignore"):
            gaps = sub[:, seen].max(axis=1) - sub[:, unseen].max(axis=1)
        thresholds = np.unique(gaps[np.isfinite(gaps)])
    if thresholds.size > n_bias_points:
        picks = np.unique(np.round(np.linspace(0, thresholds.size - 1, n_bias_points)).astype(np.int64))
        thresholds = thresholds[picks]
    return [-math.inf] + [float(t) for t in thresholds] + [math.inf]


def harmonic_mean(seen_acc: float, unseen_acc: float) -> float:
    if seen_acc + unseen_acc == 0:
        return 0.0
    return 2.0 * seen_acc * unseen_acc / (seen_acc + unseen_acc)


def curve_auc(points: Iterable[Tuple[float, float]]) -> float:
    """Trapezoidal area under (seen_acc, unseen_acc) points ordered by seen_acc."""
    ordered = sorted(points, key=lambda p: (p[0], -p[1]))
    return math.fsum((x2 - x1) * (y1 + y2) / 2.0 for (x1, y1), (x2, y2) in zip(ordered, ordered[1:]))


def _accuracy(correct: np.ndarray, subset: np.ndarray) -> float:
    count = int(subset.sum())
    if count == 0:
        return 0.0
    return int(np.count_nonzero(correct & subset)) / count


def evaluate_gczsl(
    scores: ScoreMatrix,
    test_labels: Sequence[CompositionLabel],
    n_bias_points: int = 50,
    world: World = World.CLOSED,
    tau_used: Optional[float] = None,
) -> EvalReport:
    labels = list(test_labels)
    if len(labels) != scores.n_images:
        raise EvaluationError(f"{len(labels)} labels for {scores.n_images} scored images")
    if not labels:
        raise EvaluationError("no images to evaluate")
    true_cols = scores.columns_of(labels)
    seen_images = scores.seen_mask[true_cols]
    unseen_images = ~seen_images

    curve: List[BiasPoint] = []
    predictions: List[np.ndarray] = []
    for bias in bias_candidates(scores, true_cols, n_bias_points):
        pred = predict_at_bias(scores.scores, scores.seen_mask, bias)
        correct = pred == true_cols
        seen_acc = _accuracy(correct, seen_images)
        unseen_acc = _accuracy(correct, unseen_images)
        curve.append(BiasPoint(bias, seen_acc, unseen_acc, harmonic_mean(seen_acc, unseen_acc)))
        predictions.append(pred)

    best = max(range(len(curve)), key=lambda i: (curve[i].hm, -i))
    pred = predictions[best]
    pair_index = scores.pair_index
    state_hits = sum(pair_index[p].state_idx == lbl.state_idx for p, lbl in zip(pred, labels))
    object_hits = sum(pair_index[p].object_idx == lbl.object_idx for p, lbl in zip(pred, labels))

    report = EvalReport(
        curve=curve,
        auc=curve_auc((p.seen_acc, p.unseen_acc) for p in curve),
        best_hm=curve[best].hm,
        best_seen=curve[0].seen_acc,
        best_unseen=curve[-1].unseen_acc,
        state_acc=state_hits / len(labels),
        object_acc=object_hits / len(labels),
        best_hm_bias=curve[best].bias,
        world=World(world).value,
        tau_used=tau_used,
        n_images=len(labels),
        n_candidates=len(pair_index),
    )
    logger.debug("bias sweep evaluated", points=len(curve), auc=report.auc, best_hm=report.best_hm)
    return report


@dataclass
class TauCalibration:
    tau: float
    table: List[Tuple[float, float]] = field(default_factory=list)  # (tau, validation best HM)


def calibrate_tau(
    val_scores: ScoreMatrix,
    val_labels: Sequence[CompositionLabel],
    edge_probs: np.ndarray,
    grid: Sequence[float],
    seen_pairs: Iterable[CompositionLabel] = (),
    n_bias_points: int = 50,
) -> TauCalibration:
    """Grid value with the highest validation best HM; ties go to the smaller tau."""
    if not len(val_labels):
        raise EvaluationError("tau calibration needs a non-empty validation split")
    if not len(grid):
        raise EvaluationError("tau grid is empty")
    seen_pairs = list(seen_pairs)
    calibration = TauCalibration(tau=float(sorted(grid)[0]))
    best_hm = -1.0
    for tau in sorted(set(float(t) for t in grid)):
        masked = apply_feasibility(val_scores, feasibility_mask(edge_probs, tau, seen_pairs))
        hm = evaluate_gczsl(masked, val_labels, n_bias_points).best_hm
        calibration.table.append((tau, hm))
        if hm > best_hm:
            best_hm = hm
            calibration.tau = tau
    logger.info("tau calibrated", tau=calibration.tau, best_hm=best_hm, grid_size=len(calibration.table))
    return calibration


def predict_topk(scores: ScoreMatrix, k: int) -> List[List[Tuple[CompositionLabel, float]]]:
    """Top-k pairs per image by score, ties by lowest column."""
    if k < 1:
        raise EvaluationError("k must be >= 1")
    k = min(k, len(scores.pair_index))
    order = np.argsort(-scores.scores, axis=1, kind="stable")[:, :k]
    return [
        [(scores.pair_index[c], float(scores.scores[row, c])) for c in order[row]]
        for row in range(scores.n_images)
    ]


# End-to-end evaluation of a trained model

@dataclass
class ModelScores:
    graph: ConceptGraph
    pairs: List[CompositionLabel]
    scores: ScoreMatrix
    edge_probs: np.ndarray


def score_split(dataset: Dataset, params: ModelParams, world: World, split: Split, threads: int = 1) -> ModelScores:
    vocab, splits, store, node_features = dataset
    graph = build_graph(vocab, splits, node_features)
    pairs = output_space(vocab, splits, world)
    ids = splits.image_ids(split)
    scores = score_images(params, graph, store.rows(ids), pairs, splits.seen_mask(pairs), threads)
    probs = feasibility_scores(posterior_means(params, graph), graph.n_states, graph.n_objects)
    return ModelScores(graph=graph, pairs=pairs, scores=scores, edge_probs=probs)


def evaluate_model(
    dataset: Dataset,
    params: ModelParams,
    config: RunConfig,
    split: Split = Split.TEST,
    threads: Optional[int] = None,
) -> EvalReport:
    """Score ``split`` in the configured world and run the bias sweep.

    Feasibility masking applies in the open world, and in the closed world
    only when calibration is requested. Calibration always scores the
    validation split over the open-world output space.
    """
    threads = threads or config.eval.threads
    world = config.world
    splits = dataset.splits
    target = score_split(dataset, params, world, split, threads)

    tau_used: Optional[float] = None
    scores = target.scores
    feasible = None
    if world is World.OPEN or config.eval.calibrate:
        if config.eval.calibrate:
            val = score_split(dataset, params, World.OPEN, Split.VAL, threads)
            tau_used = calibrate_tau(
                val.scores,
                splits.labels(Split.VAL),
                val.edge_probs,
                config.eval.tau_grid,
                splits.seen_pairs,
                config.eval.n_bias_points,
            ).tau
        else:
            tau_used = config.eval.tau
        mask = feasibility_mask(target.edge_probs, tau_used, splits.seen_pairs)
        feasible = mask.n_feasible
        scores = apply_feasibility(scores, mask)

    report = evaluate_gczsl(scores, splits.labels(split), config.eval.n_bias_points, world, tau_used)
    report.feasible_pairs = feasible
    logger.info(
        "evaluation complete",
        split=Split(split).value,
        world=world.value,
        auc=round(report.auc, 6),
        best_hm=round(report.best_hm, 6),
        best_seen=round(report.best_seen, 6),
        best_unseen=round(report.best_unseen, 6),
        tau=tau_used,
    )
    return report
