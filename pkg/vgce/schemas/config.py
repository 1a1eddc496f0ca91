#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Experiment Configuration Schemas
JSON run configuration with strict unknown-key rejection
"""

import json
from pathlib import Path
from typing import List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from vgce.core.exceptions import ConfigError
from vgce.models.concepts import World

DEFAULT_TAU_GRID = [round(0.05 * i, 2) for i in range(1, 11)]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelConfig(_Section):
    h: int = Field(16, ge=1, description="latent node dimension")
    k: int = Field(32, ge=1, description="common embedding dimension")
    hidden: int = Field(64, ge=1, description="encoder hidden width")
    layers: int = Field(2, ge=1, description="encoder depth")
    kl_weight: float = Field(1.0, ge=0.0)
    variational: bool = True
    logvar_clamp: float = Field(10.0, gt=0.0)
    node_dim_fallback: int = Field(64, ge=1, description="node feature width when node_features.bin is absent")


class TrainConfig(_Section):
    lr: float = Field(5e-5, gt=0.0)
    lambda_ei: float = Field(10.0, ge=0.0)
    lambda_ie: float = Field(0.01, ge=0.0)
    batch_size: int = Field(128, ge=1)
    epochs: int = Field(50, ge=0)
    seed: int = Field(0, ge=0)
    pair_cap: int = Field(50000, ge=1)
    neg_samples: int = Field(8192, ge=1)
    temperature: float = Field(1.0, gt=0.0)
    world: Optional[World] = None  # candidate set for training; defaults to the evaluation world


class EvalConfig(_Section):
    n_bias_points: int = Field(50, ge=1)
    tau: float = Field(0.2, ge=0.0, le=1.0)
    tau_grid: List[float] = Field(default_factory=lambda: list(DEFAULT_TAU_GRID))
    calibrate: bool = False
    k_list: List[int] = Field(default_factory=lambda: [1, 10, 50])
    threads: int = Field(1, ge=1)

    @field_validator("tau_grid")
    @classmethod
    def grid_in_unit_interval(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("tau_grid must not be empty")
        if any(t < 0.0 or t > 1.0 for t in v):
            raise ValueError("tau_grid values must lie in [0, 1]")
        return v

    @field_validator("k_list")
    @classmethod
    def positive_k(cls, v: List[int]) -> List[int]:
        if not v or any(k < 1 for k in v):
            raise ValueError("k_list must be non-empty with every k >= 1")
        return v


class RunConfig(_Section):
    dataset_dir: Path = Path("data")
    world: World = World.CLOSED
    output_dir: Path = Path("runs/default")
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    @property
    def train_world(self) -> World:
        return self.train.world or self.world

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path.name}: invalid JSON ({e})") from e
        try:
            return cls.model_validate(raw)
        except ValidationError as e:
            first = e.errors()[0]
            where = ".".join(str(p) for p in first["loc"]) or "<root>"
            raise ConfigError(f"{path.name}: {where}: {first['msg']} ({e.error_count()} problem(s))") from e

    def echo(self) -> dict:
        """JSON-ready dump that re-parses to an equal config."""
        return self.model_dump(mode="json")

    def with_overrides(self, seed: Optional[int] = None, output_dir: Optional[Path] = None, threads: Optional[int] = None) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = cfg.model_copy(update={"train": cfg.train.model_copy(update={"seed": seed})})
        if threads is not None:
            cfg = cfg.model_copy(update={"eval": cfg.eval.model_copy(update={"threads": threads})})
        if output_dir is not None:
            cfg = cfg.model_copy(update={"output_dir": Path(output_dir)})
        return cfg
