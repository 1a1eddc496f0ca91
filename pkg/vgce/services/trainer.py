#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Joint Training Loop
Mini-batch Adam over the ELBO and the two contrastive alignment losses
"""

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import structlog
from tqdm import tqdm

from vgce.core.exceptions import NonFiniteError, NonFiniteLossError
from vgce.core.seeding import stream
from vgce.models.concepts import Split, output_space
from vgce.models.graph import ConceptGraph, build_graph
from vgce.models.params import ModelParams
from vgce.numerics.autodiff import backward
from vgce.numerics.optim import AdamState, adam_step
from vgce.schemas.config import RunConfig
from vgce.services import vgae
from vgce.services.composer import Batch, LossBreakdown, candidate_pairs, total_loss
from vgce.services.dataset_io import Dataset

logger = structlog.get_logger(__name__)

_COMPONENTS = ("kl", "edge", "e_to_i", "i_to_e", "elbo", "total")


@dataclass
class EpochRecord:
    epoch: int
    loss_total: float
    loss_elbo: float
    loss_kl: float
    loss_edge: float
    loss_ei: float
    loss_ie: float
    wall_ms: float


@dataclass
class TrainingResult:
    params: ModelParams
    graph: ConceptGraph
    log: List[EpochRecord] = field(default_factory=list)
    steps: int = 0


def init_params(dataset: Dataset, config: RunConfig) -> ModelParams:
    model = config.model
    return ModelParams.init(
        stream(config.train.seed, "init"),
        node_dim=int(np.asarray(dataset.node_features).shape[1]),
        hidden=model.hidden,
        layers=model.layers,
        latent=model.h,
        image_dim=dataset.store.dim,
        k=model.k,
    )


def _check_finite(losses: LossBreakdown, epoch: int, batch: int) -> None:
    for name in _COMPONENTS:
        node = getattr(losses, name)
        if node is not None and not np.isfinite(node.item()):
            raise NonFiniteLossError(name, epoch, batch)


class Trainer:
    """Owns the parameters and optimizer state for one training run."""

    def __init__(self, dataset: Dataset, config: RunConfig, params: Optional[ModelParams] = None):
        self.dataset = dataset
        self.config = config
        self.graph = build_graph(dataset.vocab, dataset.splits, dataset.node_features)
        self.params = params if params is not None else init_params(dataset, config)
        self.space = output_space(dataset.vocab, dataset.splits, config.train_world)
        self.weight = vgae.pos_weight(self.graph)
        self.optimizer = AdamState(lr=config.train.lr)

        seed = config.train.seed
        self._shuffle_rng = stream(seed, "shuffle")
        self._reparam_rng = stream(seed, "reparam")
        self._negatives_rng = stream(seed, "negatives")

        train = dataset.splits.samples(Split.TRAIN)
        self._train_ids = np.array([i for i, _ in train], dtype=np.int64)
        self._train_labels = [lbl for _, lbl in train]

    def _batch(self, positions: np.ndarray) -> Batch:
        labels = [self._train_labels[p] for p in positions]
        cfg = self.config.train
        candidates, targets = candidate_pairs(self.space, labels, cfg.pair_cap, cfg.neg_samples, self._negatives_rng)
        return Batch(
            features=self.dataset.store.rows(self._train_ids[positions]),
            labels=labels,
            candidates=candidates,
            targets=targets,
        )

    def step(self, batch: Batch, epoch: int, index: int) -> LossBreakdown:
        try:
            losses = total_loss(self.graph, batch, self.params, self.config, rng=self._reparam_rng, weight=self.weight)
        except NonFiniteError as e:
            raise NonFiniteLossError(f"forward op {e.op}", epoch, index) from e
        _check_finite(losses, epoch, index)
        self.params.zero_grad()
        backward(losses.total)
        leaves = self.params.parameters()
        adam_step([p.value for p in leaves], [p.grad for p in leaves], self.optimizer)
        return losses

    def run_epoch(self, epoch: int, progress: bool = False) -> EpochRecord:
        started = time.perf_counter()
        cfg = self.config.train
        order = self._shuffle_rng.permutation(len(self._train_ids))
        chunks = [order[i:i + cfg.batch_size] for i in range(0, len(order), cfg.batch_size)]
        sums = dict.fromkeys(("loss_total", "loss_elbo", "loss_kl", "loss_edge", "loss_ei", "loss_ie"), 0.0)

        for index, positions in enumerate(tqdm(chunks, desc=f"epoch {epoch}", disable=not progress, leave=False)):
            losses = self.step(self._batch(positions), epoch, index)
            values = losses.components()
            for key in sums:
                sums[key] += values[key]
            logger.debug("batch", epoch=epoch, batch=index, **values)

        n = max(len(chunks), 1)
        return EpochRecord(
            epoch=epoch,
            wall_ms=(time.perf_counter() - started) * 1000.0,
            **{key: value / n for key, value in sums.items()},
        )

    def fit(self, log_path: Optional[Path] = None, progress: bool = False) -> TrainingResult:
        result = TrainingResult(params=self.params, graph=self.graph)
        epochs = self.config.train.epochs
        logger.info(
            "training started",
            epochs=epochs,
            train_images=len(self._train_ids),
            candidates=len(self.space),
            world=self.config.train_world.value,
            seed=self.config.train.seed,
        )
        fh = open(log_path, "w", encoding="utf-8") if log_path is not None else None
        try:
            for epoch in range(epochs):
                record = self.run_epoch(epoch, progress)
                result.log.append(record)
                if fh is not None:
                    fh.write(json.dumps(asdict(record), sort_keys=True) + "\n")
                    fh.flush()
                logger.info(
                    "epoch complete",
                    epoch=epoch,
                    loss_total=round(record.loss_total, 6),
                    loss_ei=round(record.loss_ei, 6),
                    loss_elbo=round(record.loss_elbo, 6),
                )
        finally:
            if fh is not None:
                fh.close()
        result.steps = self.optimizer.step_count
        return result


def train(
    dataset: Dataset,
    config: RunConfig,
    log_path: Optional[Path] = None,
    progress: bool = False,
) -> TrainingResult:
    return Trainer(dataset, config).fit(log_path=log_path, progress=progress)


def evaluate_losses(dataset: Dataset, config: RunConfig, params: ModelParams) -> dict:
    """Full-train-set loss components at the current parameters (posterior sample seeded)."""
    trainer = Trainer(dataset, config, params=params)
    positions = np.arange(len(trainer._train_ids))
    batch = trainer._batch(positions)
    losses = total_loss(trainer.graph, batch, params, config, rng=stream(config.train.seed, "reparam"), weight=trainer.weight)
    return losses.components()
