"""
Variational graph autoencoder over the concept graph.

GraphSAGE-mean encoder producing a Gaussian posterior per node, the
reparameterized sample, the bipartite dot-product edge decoder and the
ELBO (closed-form KL plus weighted edge BCE).
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.sparse as sp
import structlog

from vgce.core.exceptions import ShapeError
from vgce.core.seeding import stream
from vgce.models.graph import ConceptGraph
from vgce.models.params import EncoderParams
from vgce.numerics import ops
from vgce.numerics.autodiff import DiffNode, backward, constant
from vgce.numerics.optim import AdamState, adam_step

logger = structlog.get_logger(__name__)

LOGVAR_CLAMP = 10.0


@dataclass
class GaussianNodePosteriors:
    mu: DiffNode      # N x h
    logvar: DiffNode  # N x h, log sigma^2


@dataclass
class LatentNodes:
    z: DiffNode
    noise: np.ndarray


def encode_features(
    features: np.ndarray,
    aggregation: sp.spmatrix,
    params: EncoderParams,
    logvar_clamp: float = LOGVAR_CLAMP,
) -> GaussianNodePosteriors:
    """Encoder on raw matrices; ``aggregation`` is the row-normalized adjacency."""
    x = features if isinstance(features, DiffNode) else constant(features)
    if x.shape[1] != params.in_dim:
        raise ShapeError(f"encoder expects {params.in_dim}-dim node features, got {x.shape[1]}")
    if aggregation.shape != (x.shape[0], x.shape[0]):
        raise ShapeError(f"aggregation matrix {aggregation.shape} does not match {x.shape[0]} nodes")

    hidden = x
    for w_self, w_neigh in zip(params.self_weights, params.neigh_weights):
        neighbours = ops.aggregate(aggregation, hidden)
        hidden = ops.relu(ops.add(ops.matmul(hidden, w_self), ops.matmul(neighbours, w_neigh)))
    hidden = ops.row_l2_normalize(hidden)

    mu = ops.matmul(hidden, params.w_mu)
    logvar = ops.clamp(ops.matmul(hidden, params.w_logvar), -logvar_clamp, logvar_clamp)
    return GaussianNodePosteriors(mu=mu, logvar=logvar)


def encode(graph: ConceptGraph, params: EncoderParams, logvar_clamp: float = LOGVAR_CLAMP) -> GaussianNodePosteriors:
    return encode_features(graph.features64, graph.aggregation, params, logvar_clamp)


def reparameterize(
    post: GaussianNodePosteriors,
    rng_seed: Optional[int] = None,
    noise: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
) -> LatentNodes:
    """z = mu + exp(0.5 logvar) * eps; gradients reach mu and logvar, never eps."""
    if noise is None:
        generator = rng if rng is not None else stream(rng_seed or 0, "reparam")
        noise = generator.standard_normal(post.mu.shape)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != post.mu.shape:
        raise ShapeError(f"noise {noise.shape} does not match posterior {post.mu.shape}")
    sigma = ops.exp(ops.scale(post.logvar, 0.5))
    z = ops.add(post.mu, ops.elementwise_mul(sigma, constant(noise)))
    return LatentNodes(z=z, noise=noise)


def posterior_mean(post: GaussianNodePosteriors) -> LatentNodes:
    """Deterministic latents (z = mu) used for inference and for the non-variational ablation."""
    return LatentNodes(z=post.mu, noise=np.zeros(post.mu.shape))


def edge_logits(z: DiffNode, n_states: int, n_objects: int) -> DiffNode:
    """<z_s, z_o> for the |S| x |O| block only."""
    if z.shape[0] != n_states + n_objects:
        raise ShapeError(f"latents have {z.shape[0]} rows, expected {n_states + n_objects}")
    z_states = ops.take_rows(z, np.arange(n_states))
    z_objects = ops.take_rows(z, np.arange(n_states, n_states + n_objects))
    return ops.matmul(z_states, ops.transpose(z_objects))


def decode_edges(z: DiffNode, n_states: int, n_objects: int) -> DiffNode:
    return ops.sigmoid(edge_logits(z, n_states, n_objects))


def kl_term(post: GaussianNodePosteriors) -> DiffNode:
    """Closed-form KL(q || N(0, I)) summed over nodes and dimensions."""
    mu_sq = ops.elementwise_mul(post.mu, post.mu)
    var = ops.exp(post.logvar)
    inner = ops.sub(ops.add(mu_sq, var), ops.add_scalar(post.logvar, 1.0))
    return ops.scale(ops.reduce_sum(inner), 0.5)


def pos_weight(graph: ConceptGraph) -> float:
    """#non-edges / #edges over the bipartite block, 1 for an edgeless graph."""
    n_edges = graph.n_edges
    total = graph.n_states * graph.n_objects
    if n_edges == 0:
        return 1.0
    return (total - n_edges) / n_edges


def edge_reconstruction_term(logits: DiffNode, targets: np.ndarray, weight: float) -> DiffNode:
    """Weighted BCE over the whole block, mean over |S| * |O| entries.

    -[w a log p + (1 - a) log(1 - p)] with p = sigmoid(x) equals
    w a softplus(-x) + (1 - a) softplus(x).
    """
    a = np.asarray(targets, dtype=np.float64)
    if a.shape != logits.shape:
        raise ShapeError(f"targets {a.shape} do not match logits {logits.shape}")
    positive = ops.elementwise_mul(ops.softplus(ops.scale(logits, -1.0)), constant(weight * a))
    negative = ops.elementwise_mul(ops.softplus(logits), constant(1.0 - a))
    return ops.scale(ops.reduce_sum(ops.add(positive, negative)), 1.0 / a.size)


def elbo_loss(
    post: GaussianNodePosteriors,
    logits: DiffNode,
    graph: ConceptGraph,
    kl_weight: float = 1.0,
    weight: Optional[float] = None,
) -> DiffNode:
    weight = pos_weight(graph) if weight is None else weight
    reconstruction = edge_reconstruction_term(logits, graph.biadjacency, weight)
    if kl_weight == 0:
        return reconstruction
    return ops.add(ops.scale(kl_term(post), kl_weight), reconstruction)


@dataclass
class GraphFitResult:
    losses: List[float] = field(default_factory=list)


def fit_graph_autoencoder(
    graph: ConceptGraph,
    params: EncoderParams,
    steps: int,
    lr: float = 0.01,
    kl_weight: float = 1.0,
    seed: int = 0,
    variational: bool = True,
) -> GraphFitResult:
    """ELBO-only training of the encoder (no image alignment)."""
    rng = stream(seed, "reparam")
    leaves = [node for _, node in params.named_parameters()]
    state = AdamState(lr=lr)
    weight = pos_weight(graph)
    result = GraphFitResult()
    for step in range(steps):
        post = encode(graph, params)
        if variational:
            z = reparameterize(post, rng=rng).z
            loss = elbo_loss(post, edge_logits(z, graph.n_states, graph.n_objects), graph, kl_weight, weight)
        else:
            logits = edge_logits(post.mu, graph.n_states, graph.n_objects)
            loss = edge_reconstruction_term(logits, graph.biadjacency, weight)
        for leaf in leaves:
            leaf.zero_grad()
        backward(loss)
        adam_step([leaf.value for leaf in leaves], [leaf.grad for leaf in leaves], state)
        result.losses.append(loss.item())
        if step % 100 == 0:
            logger.debug("graph autoencoder step", step=step, loss=result.losses[-1])
    return result
