"""
Composition embeddings and the joint training objective.

A pair (s, o) is embedded as [z_s, z_o] and projected by phi_e; an image
feature is projected by phi_i; similarity is the dot product. The total loss
is ELBO + lambda_ei * L(e->i) + lambda_ie * L(i->e).
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import structlog

from vgce.core.exceptions import EvaluationError, ShapeError
from vgce.models.concepts import CompositionLabel
from vgce.models.graph import ConceptGraph
from vgce.models.params import ModelParams
from vgce.numerics import ops
from vgce.numerics.autodiff import DiffNode, constant
from vgce.schemas.config import RunConfig
from vgce.services import vgae

logger = structlog.get_logger(__name__)


def pair_embeddings(z: DiffNode, pairs: Sequence[CompositionLabel], n_states: int) -> DiffNode:
    """Row p is concat(z[state_p], z[|S| + object_p])."""
    if not pairs:
        raise ShapeError("pair_embeddings: empty pair list")
    n_objects = z.shape[0] - n_states
    states = np.array([p.state_idx for p in pairs], dtype=np.int64)
    objects = np.array([p.object_idx for p in pairs], dtype=np.int64)
    if states.min() < 0 or states.max() >= n_states or objects.min() < 0 or objects.max() >= n_objects:
        raise ShapeError(f"pair index outside {n_states} states / {n_objects} objects")
    return ops.concat_cols(ops.take_rows(z, states), ops.take_rows(z, n_states + objects))


def similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ShapeError(f"similarity: dimensions {a.shape[0]} and {b.shape[0]} differ")
    return float(np.dot(a, b))


def _cross_entropy(logits: DiffNode, targets: np.ndarray) -> DiffNode:
    log_probs = ops.log_softmax_rows(logits)
    picked = ops.select_entries(log_probs, np.arange(len(targets)), targets)
    return ops.scale(ops.reduce_mean(picked), -1.0)


def loss_e_to_i(
    projected_pairs: DiffNode,
    projected_images: DiffNode,
    targets: Sequence[int],
    temperature: float = 1.0,
) -> DiffNode:
    """Per image, softmax over every candidate pair; positive = the image's own pair."""
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if projected_images.shape[0] == 0 or targets.size == 0:
        raise EvaluationError("loss_e_to_i: empty batch")
    if targets.size != projected_images.shape[0]:
        raise ShapeError(f"{targets.size} targets for {projected_images.shape[0]} images")
    logits = ops.matmul(projected_images, ops.transpose(projected_pairs))
    if temperature != 1.0:
        logits = ops.scale(logits, 1.0 / temperature)
    return _cross_entropy(logits, targets)


def loss_i_to_e(projected_pairs_for_batch: DiffNode, projected_images: DiffNode, temperature: float = 1.0) -> DiffNode:
    """Per sample j, softmax of its pair against the images in the batch; positive = image j."""
    batch = projected_images.shape[0]
    if batch == 0:
        raise EvaluationError("loss_i_to_e: empty batch")
    if projected_pairs_for_batch.shape[0] != batch:
        raise ShapeError(f"{projected_pairs_for_batch.shape[0]} pair rows for {batch} images")
    logits = ops.matmul(projected_pairs_for_batch, ops.transpose(projected_images))
    if temperature != 1.0:
        logits = ops.scale(logits, 1.0 / temperature)
    return _cross_entropy(logits, np.arange(batch))


def candidate_pairs(
    space: Sequence[CompositionLabel],
    batch_labels: Sequence[CompositionLabel],
    pair_cap: int,
    neg_samples: int,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[List[CompositionLabel], np.ndarray]:
    """Candidate set for the e->i softmax and each sample's target column.

    Up to ``pair_cap`` pairs the whole output space is used. Beyond it the set
    is the batch's own pairs plus ``neg_samples`` uniformly drawn pairs, kept
    in output-space order.
    """
    index = {p: i for i, p in enumerate(space)}
    try:
        positions = [index[lbl] for lbl in batch_labels]
    except KeyError as e:
        raise ShapeError(f"batch label {e.args[0]} not in the output space") from e

    if len(space) <= pair_cap:
        return list(space), np.asarray(positions, dtype=np.int64)

    if rng is None:
        raise ValueError("negative sampling needs a random generator")
    drawn = rng.choice(len(space), size=min(neg_samples, len(space)), replace=False)
    chosen = np.unique(np.concatenate([np.asarray(positions, dtype=np.int64), drawn]))
    remap = {int(c): i for i, c in enumerate(chosen)}
    return [space[int(c)] for c in chosen], np.asarray([remap[p] for p in positions], dtype=np.int64)


@dataclass
class Batch:
    features: np.ndarray               # B x d
    labels: List[CompositionLabel]
    candidates: List[CompositionLabel]
    targets: np.ndarray                # column of each sample in ``candidates``


@dataclass
class LossBreakdown:
    total: DiffNode
    elbo: DiffNode
    kl: Optional[DiffNode]
    edge: DiffNode
    e_to_i: DiffNode
    i_to_e: DiffNode

    def components(self) -> dict:
        return {
            "loss_total": self.total.item(),
            "loss_elbo": self.elbo.item(),
            "loss_kl": self.kl.item() if self.kl is not None else 0.0,
            "loss_edge": self.edge.item(),
            "loss_ei": self.e_to_i.item(),
            "loss_ie": self.i_to_e.item(),
        }


def total_loss(
    graph: ConceptGraph,
    batch: Batch,
    params: ModelParams,
    config: RunConfig,
    noise: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
    weight: Optional[float] = None,
) -> LossBreakdown:
    """One forward pass: encode, sample, decode edges, project pairs and images."""
    model_cfg, train_cfg = config.model, config.train
    post = vgae.encode(graph, params.encoder, model_cfg.logvar_clamp)
    if model_cfg.variational:
        z = vgae.reparameterize(post, noise=noise, rng=rng).z
    else:
        z = vgae.posterior_mean(post).z

    weight = vgae.pos_weight(graph) if weight is None else weight
    logits = vgae.edge_logits(z, graph.n_states, graph.n_objects)
    edge = vgae.edge_reconstruction_term(logits, graph.biadjacency, weight)
    if model_cfg.variational:
        kl = vgae.kl_term(post)
        elbo = ops.add(ops.scale(kl, model_cfg.kl_weight), edge)
    else:
        kl = None
        elbo = edge

    projected_pairs = params.projection.phi_e.forward(pair_embeddings(z, batch.candidates, graph.n_states))
    projected_images = params.projection.phi_i.forward(constant(batch.features))
    batch_pairs = ops.take_rows(projected_pairs, batch.targets)

    e_to_i = loss_e_to_i(projected_pairs, projected_images, batch.targets, train_cfg.temperature)
    i_to_e = loss_i_to_e(batch_pairs, projected_images, train_cfg.temperature)

    total = ops.add(
        elbo,
        ops.add(ops.scale(e_to_i, train_cfg.lambda_ei), ops.scale(i_to_e, train_cfg.lambda_ie)),
    )
    return LossBreakdown(total=total, elbo=elbo, kl=kl, edge=edge, e_to_i=e_to_i, i_to_e=i_to_e)
