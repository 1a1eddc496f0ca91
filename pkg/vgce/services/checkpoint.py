"""
Model checkpoint files.

Layout: b"VGCM", u32 version, u32 header length, UTF-8 JSON header (sorted
keys), then every parameter tensor as a VGCF matrix block in the order listed
in the header. No timestamps, so identical runs give identical bytes.
"""

import json
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import structlog

from vgce.core.exceptions import CheckpointError, DatasetError
from vgce.models.params import ModelParams
from vgce.schemas.config import RunConfig
from vgce.services.dataset_io import read_matrix, write_matrix

logger = structlog.get_logger(__name__)

CHECKPOINT_MAGIC = b"VGCM"
CHECKPOINT_VERSION = 1
_PREFIX = struct.Struct("<4sII")


def _empty_params(dims: Dict[str, int]) -> ModelParams:
    rng = np.random.default_rng(0)
    return ModelParams.init(rng, dims["m"], dims["hidden"], dims["layers"], dims["h"], dims["d"], dims["k"])


def save_checkpoint(
    path: Union[str, Path],
    params: ModelParams,
    config: RunConfig,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    named = params.named_parameters()
    echo = config.echo()
    echo.pop("output_dir", None)  # run location and thread count are not model state
    echo["eval"].pop("threads", None)
    header = {
        "dims": params.dims(),
        "config": echo,
        "seed": config.train.seed,
        "order": [name for name, _ in named],
        "shapes": [list(node.shape) for _, node in named],
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for _, node in named:
            write_matrix(fh, node.value)
    logger.info("checkpoint saved", path=str(path), tensors=len(named))
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[ModelParams, Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        prefix = fh.read(_PREFIX.size)
        if len(prefix) < _PREFIX.size:
            raise CheckpointError(f"{path.name}: truncated checkpoint")
        magic, version, length = _PREFIX.unpack(prefix)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path.name}: bad magic bytes {magic!r}")
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path.name}: unsupported checkpoint version {version}")
        try:
            header = json.loads(fh.read(length).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"{path.name}: unreadable header ({e})") from e

        params = _empty_params(header["dims"])
        named = params.named_parameters()
        if [name for name, _ in named] != header["order"]:
            raise CheckpointError(f"{path.name}: parameter order does not match this model layout")
        for (name, node), shape in zip(named, header["shapes"]):
            try:
                matrix = read_matrix(fh, f"{path.name}:{name}")
            except DatasetError as e:
                raise CheckpointError(str(e)) from e
            if list(matrix.shape) != list(shape) or matrix.shape != node.shape:
                raise CheckpointError(f"{path.name}: tensor {name} has shape {matrix.shape}, expected {tuple(shape)}")
            node.value[...] = matrix.astype(np.float64)
    return params, header


def check_compatible(header: Dict[str, Any], node_dim: int, image_dim: int, config: Optional[RunConfig] = None) -> None:
    """Raise CheckpointError when the checkpoint cannot run on this dataset/config."""
    dims = header["dims"]
    if dims["m"] != node_dim:
        raise CheckpointError(f"checkpoint expects {dims['m']}-dim node features, dataset has {node_dim}")
    if dims["d"] != image_dim:
        raise CheckpointError(f"checkpoint expects {dims['d']}-dim image features, dataset has {image_dim}")
    if config is not None:
        model = config.model
        for key, value in (("h", model.h), ("k", model.k), ("hidden", model.hidden), ("layers", model.layers)):
            if dims[key] != value:
                raise CheckpointError(f"checkpoint {key}={dims[key]} but config says {key}={value}")
