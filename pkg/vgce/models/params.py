"""
Learnable parameters: graph encoder and the two projection heads.

Parameters are exposed as an ordered list of (name, leaf) pairs; that order is
the optimizer order and the checkpoint order.
"""

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from vgce.numerics import ops
from vgce.numerics.autodiff import DiffNode, parameter


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class EncoderParams:
    """Per-layer self and neighbour weights plus the mean / log-variance heads (no biases)."""
    self_weights: List[DiffNode]
    neigh_weights: List[DiffNode]
    w_mu: DiffNode
    w_logvar: DiffNode

    @classmethod
    def init(cls, rng: np.random.Generator, in_dim: int, hidden: int, layers: int, latent: int) -> "EncoderParams":
        dims = [in_dim] + [hidden] * layers
        self_w, neigh_w = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            self_w.append(parameter(glorot_uniform(rng, fan_in, fan_out)))
            neigh_w.append(parameter(glorot_uniform(rng, fan_in, fan_out)))
        return cls(
            self_weights=self_w,
            neigh_weights=neigh_w,
            w_mu=parameter(glorot_uniform(rng, hidden, latent)),
            w_logvar=parameter(glorot_uniform(rng, hidden, latent)),
        )

    @property
    def layers(self) -> int:
        return len(self.self_weights)

    @property
    def in_dim(self) -> int:
        return self.self_weights[0].shape[0]

    @property
    def latent_dim(self) -> int:
        return self.w_mu.shape[1]

    def named_parameters(self) -> List[Tuple[str, DiffNode]]:
        named = []
        for i, (ws, wn) in enumerate(zip(self.self_weights, self.neigh_weights)):
            named.append((f"encoder.layer{i}.w_self", ws))
            named.append((f"encoder.layer{i}.w_neigh", wn))
        named.append(("encoder.w_mu", self.w_mu))
        named.append(("encoder.w_logvar", self.w_logvar))
        return named


@dataclass
class MLPParams:
    """linear, relu, linear"""
    w1: DiffNode
    b1: DiffNode
    w2: DiffNode
    b2: DiffNode

    @classmethod
    def init(cls, rng: np.random.Generator, in_dim: int, hidden: int, out_dim: int) -> "MLPParams":
        return cls(
            w1=parameter(glorot_uniform(rng, in_dim, hidden)),
            b1=parameter(np.zeros((1, hidden))),
            w2=parameter(glorot_uniform(rng, hidden, out_dim)),
            b2=parameter(np.zeros((1, out_dim))),
        )

    def forward(self, x) -> DiffNode:
        hidden = ops.relu(ops.add_bias(ops.matmul(x, self.w1), self.b1))
        return ops.add_bias(ops.matmul(hidden, self.w2), self.b2)

    @property
    def in_dim(self) -> int:
        return self.w1.shape[0]

    def named_parameters(self, prefix: str) -> List[Tuple[str, DiffNode]]:
        return [(f"{prefix}.w1", self.w1), (f"{prefix}.b1", self.b1), (f"{prefix}.w2", self.w2), (f"{prefix}.b2", self.b2)]


@dataclass
class ProjectionParams:
    phi_e: MLPParams  # pair embedding (2h) -> k
    phi_i: MLPParams  # image feature (d) -> k

    @classmethod
    def init(cls, rng: np.random.Generator, latent: int, image_dim: int, k: int) -> "ProjectionParams":
        return cls(
            phi_e=MLPParams.init(rng, 2 * latent, k, k),
            phi_i=MLPParams.init(rng, image_dim, k, k),
        )

    @property
    def k(self) -> int:
        return self.phi_e.w2.shape[1]

    def named_parameters(self) -> List[Tuple[str, DiffNode]]:
        return self.phi_e.named_parameters("phi_e") + self.phi_i.named_parameters("phi_i")


@dataclass
class ModelParams:
    encoder: EncoderParams
    projection: ProjectionParams

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        node_dim: int,
        hidden: int,
        layers: int,
        latent: int,
        image_dim: int,
        k: int,
    ) -> "ModelParams":
        encoder = EncoderParams.init(rng, node_dim, hidden, layers, latent)
        projection = ProjectionParams.init(rng, latent, image_dim, k)
        return cls(encoder, projection)

    def named_parameters(self) -> List[Tuple[str, DiffNode]]:
        return self.encoder.named_parameters() + self.projection.named_parameters()

    def parameters(self) -> List[DiffNode]:
        return [node for _, node in self.named_parameters()]

    def zero_grad(self) -> None:
        for node in self.parameters():
            node.zero_grad()

    def dims(self) -> Dict[str, int]:
        return {
            "m": self.encoder.in_dim,
            "hidden": self.encoder.self_weights[0].shape[1],
            "layers": self.encoder.layers,
            "h": self.encoder.latent_dim,
            "k": self.projection.k,
            "d": self.projection.phi_i.in_dim,
        }

    def snapshot(self) -> List[np.ndarray]:
        return [node.value.copy() for node in self.parameters()]
