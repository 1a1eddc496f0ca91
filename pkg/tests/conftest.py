#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
VGCE - Test Configuration
Shared synthetic datasets, run configurations and benchmarking helpers
"""

import os
import time

import numpy as np
import psutil
import pytest

os.environ.setdefault("VGCE_LOG", "error")

from vgce.core.logging import configure_logging
from vgce.models.concepts import CompositionLabel, ConceptVocabulary, DatasetSplits, FeatureStore
from vgce.schemas.config import EvalConfig, ModelConfig, RunConfig, TrainConfig
from vgce.services.dataset_io import Dataset, save_dataset
from vgce.services.synthetic import SyntheticSpec, generate_synthetic
from vgce.services.trainer import train


@pytest.fixture(scope="session", autouse=True)
def quiet_logging():
    """Only failures reach stderr during the test session"""
    configure_logging("error", "console")
    yield


# Datasets

@pytest.fixture(scope="session")
def tiny_spec() -> SyntheticSpec:
    """6 states x 5 objects; small enough for coordinate-wise gradient checks"""
    return SyntheticSpec(
        n_states=6,
        n_objects=5,
        seen_fraction=0.5,
        unseen_fraction=0.3,
        d=8,
        m=6,
        samples_per_pair=4,
        noise_sigma=0.1,
        seed=3,
    )


@pytest.fixture(scope="session")
def tiny_dataset(tiny_spec) -> Dataset:
    return generate_synthetic(tiny_spec)


@pytest.fixture(scope="session")
def reference_spec() -> SyntheticSpec:
    """The 8 x 6 synthetic benchmark used for end-to-end checks"""
    return SyntheticSpec(8, 6, 0.5, 0.25, d=32, m=16, samples_per_pair=20, noise_sigma=0.1, seed=7)


@pytest.fixture(scope="session")
def reference_dataset(reference_spec) -> Dataset:
    return generate_synthetic(reference_spec)


@pytest.fixture
def dataset_dir(tmp_path, tiny_dataset):
    """The tiny dataset written to disk"""
    return save_dataset(tmp_path / "tiny", *tiny_dataset)


@pytest.fixture
def hand_dataset() -> Dataset:
    """2 states x 2 objects with one seen and one unseen pair"""
    vocab = ConceptVocabulary(("wet", "dry"), ("dog", "cat"))
    seen = CompositionLabel(0, 0)
    unseen = CompositionLabel(1, 1)
    splits = DatasetSplits(
        seen_pairs=frozenset({seen}),
        unseen_pairs=frozenset({unseen}),
        train_samples=((0, seen), (1, seen)),
        val_samples=((2, seen), (3, unseen)),
        test_samples=((4, seen), (5, unseen)),
    )
    rng = np.random.default_rng(11)
    store = FeatureStore(rng.standard_normal((6, 3)).astype(np.float32))
    node_features = rng.standard_normal((4, 2)).astype(np.float32)
    return Dataset(vocab, splits, store, node_features)


# Configurations

def make_tiny_config(**train_overrides) -> RunConfig:
    train_fields = dict(lr=5e-3, epochs=3, batch_size=16, seed=0)
    train_fields.update(train_overrides)
    return RunConfig(
        model=ModelConfig(h=4, k=6, hidden=8, layers=2, kl_weight=0.01),
        train=TrainConfig(**train_fields),
        eval=EvalConfig(n_bias_points=50),
    )


def make_reference_config(seed: int = 7, epochs: int = 200) -> RunConfig:
    return RunConfig(
        model=ModelConfig(h=16, k=32, hidden=32, layers=2, kl_weight=0.01),
        train=TrainConfig(lr=5e-3, epochs=epochs, batch_size=128, seed=seed),
    )


@pytest.fixture
def tiny_config() -> RunConfig:
    return make_tiny_config()


@pytest.fixture(scope="session")
def trained_reference(reference_dataset):
    """Model trained for 200 epochs on the reference dataset with seed 7"""
    config = make_reference_config(seed=7)
    result = train(reference_dataset, config)
    return config, result


# Performance helpers

@pytest.fixture
def performance_timer():
    """Performance timing fixture"""
    class PerformanceTimer:
        def __init__(self):
            self.start_time = None
            self.duration = None

        def start(self):
            self.start_time = time.perf_counter()

        def stop(self):
            self.duration = time.perf_counter() - self.start_time
            return self.duration

        def assert_faster_than(self, max_seconds: float):
            """Assert that operation completed within time limit"""
            assert self.duration is not None, "Timer was not stopped"
            assert self.duration < max_seconds, f"Operation took {self.duration:.3f}s, expected < {max_seconds}s"

    return PerformanceTimer()


@pytest.fixture
def memory_profiler():
    """Resident memory growth over a block of work"""
    class MemoryProfiler:
        def __init__(self):
            self.process = psutil.Process(os.getpid())
            self.initial_memory = None

        def start(self):
            self.initial_memory = self.process.memory_info().rss

        def get_usage_mb(self):
            if self.initial_memory is None:
                return 0
            return (self.process.memory_info().rss - self.initial_memory) / 1024 / 1024

        def assert_memory_under(self, max_mb: float):
            usage = self.get_usage_mb()
            assert usage < max_mb, f"Memory usage {usage:.1f}MB exceeds limit of {max_mb}MB"

    return MemoryProfiler()


# Pytest marks for test categorization
def pytest_configure(config):
    """Configure pytest with custom markers"""
    config.addinivalue_line("markers", "unit: Unit tests")
    config.addinivalue_line("markers", "integration: Integration tests")
    config.addinivalue_line("markers", "slow: Slow running tests")
    config.addinivalue_line("markers", "acceptance: End-to-end acceptance properties")
