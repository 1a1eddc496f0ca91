#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
VGCE - Training and Checkpoint Tests
Trainer bookkeeping, seeded determinism and checkpoint files
"""

import json
import math

import numpy as np
import pytest

from vgce.core.exceptions import CheckpointError, NonFiniteLossError
from vgce.schemas.config import RunConfig
from vgce.services.checkpoint import CHECKPOINT_MAGIC, check_compatible, load_checkpoint, save_checkpoint
from vgce.services.trainer import Trainer, evaluate_losses, init_params, train
from tests.conftest import make_tiny_config


@pytest.mark.unit
class TestTrainer:
    """Mini-batch Adam loop"""

    def test_zero_epochs_leave_parameters_untouched(self, tiny_dataset):
        config = make_tiny_config(epochs=0)
        before = init_params(tiny_dataset, config).snapshot()
        result = train(tiny_dataset, config)
        assert result.log == []
        assert result.steps == 0
        for a, b in zip(before, result.params.snapshot()):
            np.testing.assert_array_equal(a, b)

    def test_step_count_and_epoch_records(self, tiny_dataset, tmp_path):
        config = make_tiny_config(epochs=3, batch_size=16)
        log_path = tmp_path / "train_log.jsonl"
        result = train(tiny_dataset, config, log_path=log_path)

        n_train = len(tiny_dataset.splits.train_samples)
        assert result.steps == 3 * math.ceil(n_train / 16)
        assert [r.epoch for r in result.log] == [0, 1, 2]

        lines = log_path.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 3
        record = json.loads(lines[-1])
        assert set(record) == {"epoch", "loss_total", "loss_elbo", "loss_kl", "loss_edge", "loss_ei", "loss_ie", "wall_ms"}
        assert all(math.isfinite(record[key]) for key in record)

    def test_parameters_move(self, tiny_dataset):
        config = make_tiny_config(epochs=1)
        before = init_params(tiny_dataset, config).snapshot()
        after = train(tiny_dataset, config).params.snapshot()
        assert any(not np.array_equal(a, b) for a, b in zip(before, after))

    def test_same_seed_same_parameters(self, tiny_dataset):
        config = make_tiny_config(epochs=2)
        first = train(tiny_dataset, config).params.snapshot()
        second = train(tiny_dataset, config).params.snapshot()
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a, b)

    def test_different_seed_different_parameters(self, tiny_dataset):
        first = train(tiny_dataset, make_tiny_config(epochs=1, seed=0)).params.snapshot()
        second = train(tiny_dataset, make_tiny_config(epochs=1, seed=1)).params.snapshot()
        assert any(not np.array_equal(a, b) for a, b in zip(first, second))

    def test_open_world_candidates(self, tiny_dataset):
        config = make_tiny_config(epochs=1, world="open")
        trainer = Trainer(tiny_dataset, config)
        assert len(trainer.space) == tiny_dataset.vocab.n_states * tiny_dataset.vocab.n_objects
        assert trainer.fit().steps > 0

    def test_sampled_negatives_path(self, tiny_dataset):
        result = train(tiny_dataset, make_tiny_config(epochs=1, pair_cap=5, neg_samples=4))
        assert all(math.isfinite(r.loss_total) for r in result.log)

    def test_non_finite_forward_aborts(self, tiny_dataset):
        config = make_tiny_config(epochs=1)
        params = init_params(tiny_dataset, config)
        params.projection.phi_i.w1.value[...] = np.inf
        with pytest.raises(NonFiniteLossError) as exc:
            Trainer(tiny_dataset, config, params=params).fit()
        assert exc.value.epoch == 0
        assert exc.value.batch == 0
        assert exc.value.component.startswith("forward op")

    def test_evaluate_losses(self, tiny_dataset):
        config = make_tiny_config()
        components = evaluate_losses(tiny_dataset, config, init_params(tiny_dataset, config))
        assert set(components) == {"loss_total", "loss_elbo", "loss_kl", "loss_edge", "loss_ei", "loss_ie"}
        assert components["loss_total"] > 0.0


@pytest.mark.unit
class TestCheckpoint:
    """VGCM files"""

    def test_round_trip(self, tiny_dataset, tmp_path):
        config = make_tiny_config()
        params = init_params(tiny_dataset, config)
        path = save_checkpoint(tmp_path / "model.vgcm", params, config, extra={"epochs_run": 0})
        loaded, header = load_checkpoint(path)

        assert header["dims"] == params.dims()
        assert header["seed"] == 0
        assert header["extra"] == {"epochs_run": 0}
        assert header["order"] == [name for name, _ in params.named_parameters()]
        for a, b in zip(params.snapshot(), loaded.snapshot()):
            np.testing.assert_array_equal(a.astype(np.float32).astype(np.float64), b)
        assert RunConfig.model_validate(header["config"]).model == config.model

    def test_magic_bytes(self, tiny_dataset, tmp_path):
        config = make_tiny_config()
        path = save_checkpoint(tmp_path / "model.vgcm", init_params(tiny_dataset, config), config)
        assert path.read_bytes()[:4] == CHECKPOINT_MAGIC

    def test_thread_count_not_recorded(self, tiny_dataset, tmp_path):
        config = make_tiny_config()
        params = init_params(tiny_dataset, config)
        a = save_checkpoint(tmp_path / "a.vgcm", params, config.with_overrides(threads=1, output_dir=tmp_path / "x"))
        b = save_checkpoint(tmp_path / "b.vgcm", params, config.with_overrides(threads=4, output_dir=tmp_path / "y"))
        assert a.read_bytes() == b.read_bytes()

    def test_identical_runs_identical_bytes(self, tiny_dataset, tmp_path):
        config = make_tiny_config(epochs=2)
        a = save_checkpoint(tmp_path / "a.vgcm", train(tiny_dataset, config).params, config)
        b = save_checkpoint(tmp_path / "b.vgcm", train(tiny_dataset, config).params, config)
        assert a.read_bytes() == b.read_bytes()

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match="not found"):
            load_checkpoint(tmp_path / "nope.vgcm")

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.vgcm"
        path.write_bytes(b"XXXX" + b"\x00" * 32)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_truncated_tensor(self, tiny_dataset, tmp_path):
        config = make_tiny_config()
        path = save_checkpoint(tmp_path / "model.vgcm", init_params(tiny_dataset, config), config)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_compatibility(self, tiny_dataset, tmp_path):
        config = make_tiny_config()
        params = init_params(tiny_dataset, config)
        _, header = load_checkpoint(save_checkpoint(tmp_path / "model.vgcm", params, config))
        node_dim = tiny_dataset.node_features.shape[1]
        image_dim = tiny_dataset.store.dim

        check_compatible(header, node_dim, image_dim, config)
        with pytest.raises(CheckpointError, match="node features"):
            check_compatible(header, node_dim + 1, image_dim)
        with pytest.raises(CheckpointError, match="image features"):
            check_compatible(header, node_dim, image_dim + 1)
        wider = config.model_copy(update={"model": config.model.model_copy(update={"k": config.model.k + 1})})
        with pytest.raises(CheckpointError, match="k="):
            check_compatible(header, node_dim, image_dim, wider)
