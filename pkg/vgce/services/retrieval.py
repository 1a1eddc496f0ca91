"""
Image retrieval with a (query image, target state) query.

The query image's object is predicted by the model, the pair (target state,
predicted object) is projected with phi_e, and database images are ranked by
similarity of their phi_i projection.
"""

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import structlog

from vgce.core.exceptions import EvaluationError
from vgce.models.concepts import CompositionLabel, DatasetSplits, Split
from vgce.models.params import ModelParams
from vgce.services.dataset_io import Dataset
from vgce.services.evaluation import (
    ModelScores,
    apply_feasibility,
    feasibility_mask,
    posterior_means,
    predict_at_bias,
    project_images,
    project_pairs,
    score_split,
)

logger = structlog.get_logger(__name__)


@dataclass(frozen=True)
class RetrievalQuery:
    image_id: int
    source: CompositionLabel
    target_state: int
    target_image_id: int


def build_retrieval_queries(
    splits: DatasetSplits,
    split: Split = Split.TEST,
    max_queries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> List[RetrievalQuery]:
    """One query per (image, other state) whose target pair has an image in ``split``.

    The ground truth is the lowest-id image carrying the target pair.
    """
    samples = splits.samples(split)
    first_image: Dict[CompositionLabel, int] = {}
    for image_id, label in sorted(samples):
        first_image.setdefault(label, image_id)

    by_object: Dict[int, List[int]] = {}
    for label in first_image:
        by_object.setdefault(label.object_idx, []).append(label.state_idx)

    queries = []
    for image_id, label in samples:
        for state in sorted(by_object.get(label.object_idx, [])):
            if state == label.state_idx:
                continue
            target = first_image[CompositionLabel(state, label.object_idx)]
            if target == image_id:
                continue
            queries.append(RetrievalQuery(image_id, label, state, target))

    if max_queries is not None and len(queries) > max_queries:
        if rng is None:
            raise ValueError("subsampling queries needs a random generator")
        keep = np.sort(rng.choice(len(queries), size=max_queries, replace=False))
        queries = [queries[i] for i in keep]
    return queries


def recall_at_k(
    scores: np.ndarray,
    targets: Sequence[int],
    k_list: Sequence[int],
    exclude: Optional[Sequence[int]] = None,
) -> Dict[int, float]:
    """Fraction of queries whose target column ranks within the top k.

    Ranking is by score descending with ties to the lower column; the
    ``exclude`` column of each query is removed from its candidate set.
    """
    scores = np.array(scores, dtype=np.float64, copy=True)
    n_queries, n_database = scores.shape
    available = n_database - (1 if exclude is not None else 0)
    for k in k_list:
        if k < 1:
            raise EvaluationError("k must be >= 1")
        if k > available:
            raise EvaluationError(f"k={k} exceeds the {available} retrievable database images")
    if n_queries == 0:
        raise EvaluationError("no retrieval queries")

    targets = np.asarray(targets, dtype=np.int64)
    if exclude is not None:
        excluded = np.asarray(exclude, dtype=np.int64)
        if np.any(excluded == targets):
            raise EvaluationError("a query's target is also its excluded image")
        scores[np.arange(n_queries), excluded] = -np.inf

    order = np.argsort(-scores, axis=1, kind="stable")
    ranks = np.argmax(order == targets[:, None], axis=1) + 1
    return {int(k): float(np.count_nonzero(ranks <= k) / n_queries) for k in k_list}


@dataclass
class RetrievalReport:
    recall: Dict[int, float]
    n_queries: int
    n_database: int
    bias: float
    random_baseline: Dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["recall"] = {str(k): v for k, v in self.recall.items()}
        out["random_baseline"] = {str(k): v for k, v in self.random_baseline.items()}
        if np.isinf(self.bias):
            out["bias"] = "inf" if self.bias > 0 else "-inf"
        return out


def evaluate_retrieval(
    dataset: Dataset,
    params: ModelParams,
    queries: Sequence[RetrievalQuery],
    k_list: Sequence[int],
    bias: float = 0.0,
    scored: Optional[ModelScores] = None,
    split: Split = Split.TEST,
    world=None,
    threads: int = 1,
    tau: Optional[float] = None,
) -> RetrievalReport:
    """R@k over ``queries`` with the images of ``split`` as the database.

    With ``tau`` set, the query-object prediction only considers pairs that
    survive the same feasibility mask the evaluation sweep used.
    """
    if not queries:
        raise EvaluationError("no retrieval queries")
    splits = dataset.splits
    if scored is None:
        scored = score_split(dataset, params, world or splits.world, split, threads)

    database_ids = splits.image_ids(split)
    column_of = {int(image_id): col for col, image_id in enumerate(database_ids)}

    candidates = scored.scores
    if tau is not None:
        candidates = apply_feasibility(candidates, feasibility_mask(scored.edge_probs, tau, splits.seen_pairs))
    predicted = predict_at_bias(candidates.scores, candidates.seen_mask, bias)
    query_rows = np.array([column_of[q.image_id] for q in queries], dtype=np.int64)
    predicted_objects = [scored.pairs[predicted[row]].object_idx for row in query_rows]
    target_pairs = [CompositionLabel(q.target_state, obj) for q, obj in zip(queries, predicted_objects)]

    z = posterior_means(params, scored.graph)
    query_vectors = project_pairs(params, z, target_pairs, scored.graph.n_states)
    database_vectors = project_images(params, dataset.store.rows(database_ids))
    similarity = query_vectors @ database_vectors.T

    targets = [column_of[q.target_image_id] for q in queries]
    recall = recall_at_k(similarity, targets, k_list, exclude=query_rows)
    available = len(database_ids) - 1
    report = RetrievalReport(
        recall=recall,
        n_queries=len(queries),
        n_database=len(database_ids),
        bias=float(bias),
        random_baseline={int(k): k / available for k in k_list},
    )
    logger.info("retrieval evaluated", queries=len(queries), database=len(database_ids), **{f"r@{k}": v for k, v in recall.items()})
    return report
