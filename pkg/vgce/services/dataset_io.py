#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Dataset Directory I/O
Bit-exact reader and writer for metadata.json, features.bin and node_features.bin
"""

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import BinaryIO, NamedTuple, Optional, Union

import numpy as np
import structlog

from vgce.core.exceptions import (
    DanglingReferenceError,
    FormatError,
    MissingFileError,
    ShapeMismatchError,
)
from vgce.core.seeding import stream
from vgce.models.concepts import (
    CompositionLabel,
    ConceptVocabulary,
    DatasetSplits,
    FeatureStore,
    Split,
    World,
    all_pairs,
    output_space,
)

logger = structlog.get_logger(__name__)

MATRIX_MAGIC = b"VGCF"
MATRIX_VERSION = 1
_MATRIX_HEADER = struct.Struct("<4sIII")

METADATA_FILE = "metadata.json"
FEATURES_FILE = "features.bin"
NODE_FEATURES_FILE = "node_features.bin"


class Dataset(NamedTuple):
    vocab: ConceptVocabulary
    splits: DatasetSplits
    store: FeatureStore
    node_features: np.ndarray


# Matrix codec

def write_matrix(fh: BinaryIO, matrix: np.ndarray) -> None:
    data = np.ascontiguousarray(matrix, dtype="<f4")
    if data.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {data.shape}")
    fh.write(_MATRIX_HEADER.pack(MATRIX_MAGIC, MATRIX_VERSION, data.shape[0], data.shape[1]))
    fh.write(data.tobytes(order="C"))


def read_matrix(fh: BinaryIO, name: str) -> np.ndarray:
    """Read one matrix block; ``name`` is used in error messages."""
    header = fh.read(_MATRIX_HEADER.size)
    if len(header) < _MATRIX_HEADER.size:
        raise FormatError(f"{name}: truncated header")
    magic, version, rows, cols = _MATRIX_HEADER.unpack(header)
    if magic != MATRIX_MAGIC:
        raise FormatError(f"{name}: bad magic bytes {magic!r}")
    if version != MATRIX_VERSION:
        raise FormatError(f"{name}: unsupported format version {version}")
    expected = rows * cols * 4
    payload = fh.read(expected)
    if len(payload) != expected:
        raise ShapeMismatchError(name, f"header declares {rows}x{cols} but payload has {len(payload)} bytes")
    return np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float32)


def save_matrix(path: Path, matrix: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_matrix(fh, matrix)


def load_matrix(path: Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"{path.name}: file not found in {path.parent}")
    with open(path, "rb") as fh:
        matrix = read_matrix(fh, path.name)
        trailing = fh.read(1)
    if trailing:
        raise ShapeMismatchError(path.name, "trailing bytes after the declared matrix")
    return matrix


# Metadata

def _metadata_dict(vocab: ConceptVocabulary, splits: DatasetSplits) -> dict:
    def samples(split: Split):
        return [[image_id, lbl.state_idx, lbl.object_idx] for image_id, lbl in splits.samples(split)]

    return {
        "states": list(vocab.states),
        "objects": list(vocab.objects),
        "seen_pairs": [[p.state_idx, p.object_idx] for p in sorted(splits.seen_pairs)],
        "unseen_pairs": [[p.state_idx, p.object_idx] for p in sorted(splits.unseen_pairs)],
        "train": samples(Split.TRAIN),
        "val": samples(Split.VAL),
        "test": samples(Split.TEST),
    }


def _encode_metadata(meta: dict) -> bytes:
    return (json.dumps(meta, ensure_ascii=False, separators=(",", ":")) + "\n").encode("utf-8")


def _parse_metadata(raw: bytes, world: World):
    try:
        meta = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{METADATA_FILE}: {e}") from e

    required = ("states", "objects", "seen_pairs", "unseen_pairs", "train", "val", "test")
    missing = [k for k in required if k not in meta]
    if missing:
        raise FormatError(f"{METADATA_FILE}: missing keys {missing}")

    try:
        vocab = ConceptVocabulary(tuple(meta["states"]), tuple(meta["objects"]))

        def pairs(key):
            return [CompositionLabel(int(s), int(o)) for s, o in meta[key]]

        def samples(key):
            return [(int(i), CompositionLabel(int(s), int(o))) for i, s, o in meta[key]]

        splits = DatasetSplits(
            seen_pairs=frozenset(pairs("seen_pairs")),
            unseen_pairs=frozenset(pairs("unseen_pairs")),
            train_samples=tuple(samples("train")),
            val_samples=tuple(samples("val")),
            test_samples=tuple(samples("test")),
            world=world,
        )
    except (TypeError, ValueError) as e:
        raise FormatError(f"{METADATA_FILE}: malformed entry ({e})") from e
    return vocab, splits


def _check_image_references(splits: DatasetSplits, n_rows: int) -> None:
    referenced = {image_id for split in Split for image_id, _ in splits.samples(split)}
    if len(referenced) != n_rows:
        raise ShapeMismatchError(FEATURES_FILE, f"{n_rows} rows but {len(referenced)} distinct images referenced")
    for split in Split:
        for image_id, _ in splits.samples(split):
            if image_id < 0 or image_id >= n_rows:
                raise DanglingReferenceError(
                    f"{split.value} image id {image_id} has no row in {FEATURES_FILE} ({n_rows} rows)"
                )


# Public API

def save_dataset(
    dir_path: Union[str, Path],
    vocab: ConceptVocabulary,
    splits: DatasetSplits,
    store: FeatureStore,
    node_features: np.ndarray,
) -> Path:
    out = Path(dir_path)
    out.mkdir(parents=True, exist_ok=True)
    (out / METADATA_FILE).write_bytes(_encode_metadata(_metadata_dict(vocab, splits)))
    save_matrix(out / FEATURES_FILE, store.features)
    save_matrix(out / NODE_FEATURES_FILE, node_features)
    logger.info("dataset saved", path=str(out), images=store.n_images, states=vocab.n_states, objects=vocab.n_objects)
    return out


def load_dataset(
    dir_path: Union[str, Path],
    world: World = World.CLOSED,
    fallback_node_dim: int = 64,
    seed: int = 0,
) -> Dataset:
    """Load and validate a dataset directory.

    When node_features.bin is absent the node features fall back to a seeded
    Gaussian with standard deviation 1/sqrt(fallback_node_dim).
    """
    root = Path(dir_path)
    if not root.is_dir():
        raise MissingFileError(f"dataset directory not found: {root}")
    meta_path = root / METADATA_FILE
    if not meta_path.exists():
        raise MissingFileError(f"{METADATA_FILE}: file not found in {root}")

    vocab, splits = _parse_metadata(meta_path.read_bytes(), World(world))
    splits.validate(vocab)

    features = load_matrix(root / FEATURES_FILE)
    _check_image_references(splits, features.shape[0])
    store = FeatureStore(features)

    node_path = root / NODE_FEATURES_FILE
    if node_path.exists():
        node_features = load_matrix(node_path)
        if node_features.shape[0] != vocab.n_nodes:
            raise ShapeMismatchError(
                NODE_FEATURES_FILE, f"expected {vocab.n_nodes} rows (states then objects), got {node_features.shape[0]}"
            )
        if not np.all(np.isfinite(node_features)):
            raise ShapeMismatchError(NODE_FEATURES_FILE, "contains non-finite values")
    else:
        rng = stream(seed, "init")
        sigma = 1.0 / np.sqrt(fallback_node_dim)
        node_features = (rng.standard_normal((vocab.n_nodes, fallback_node_dim)) * sigma).astype(np.float32)
        logger.warning("node features missing, using seeded gaussian fallback", dim=fallback_node_dim, seed=seed)

    logger.info(
        "dataset loaded",
        path=str(root),
        world=splits.world.value,
        states=vocab.n_states,
        objects=vocab.n_objects,
        images=store.n_images,
    )
    return Dataset(vocab, splits, store, node_features)


@dataclass
class DatasetSummary:
    n_states: int
    n_objects: int
    n_nodes: int
    pairs_closed_world: int
    pairs_open_world: int
    hypothetical_fraction_open_world: float
    seen_pairs: int
    unseen_pairs: int
    train_images: int
    val_images: int
    test_images: int
    val_seen_pairs: int
    val_unseen_pairs: int
    test_seen_pairs: int
    test_unseen_pairs: int
    feature_dim: int
    node_feature_dim: int

    def to_dict(self) -> dict:
        return asdict(self)


def describe_dataset(dataset: Dataset) -> DatasetSummary:
    vocab, splits, store, node_features = dataset
    cw = output_space(vocab, splits, World.CLOSED)
    ow = all_pairs(vocab)

    def pair_counts(split: Split):
        labels = set(splits.labels(split))
        return len(labels & splits.seen_pairs), len(labels & splits.unseen_pairs)

    val_seen, val_unseen = pair_counts(Split.VAL)
    test_seen, test_unseen = pair_counts(Split.TEST)
    return DatasetSummary(
        n_states=vocab.n_states,
        n_objects=vocab.n_objects,
        n_nodes=vocab.n_nodes,
        pairs_closed_world=len(cw),
        pairs_open_world=len(ow),
        hypothetical_fraction_open_world=len(splits.hypothetical_pairs(vocab)) / len(ow),
        seen_pairs=len(splits.seen_pairs),
        unseen_pairs=len(splits.unseen_pairs),
        train_images=len(splits.train_samples),
        val_images=len(splits.val_samples),
        test_images=len(splits.test_samples),
        val_seen_pairs=val_seen,
        val_unseen_pairs=val_unseen,
        test_seen_pairs=test_seen,
        test_unseen_pairs=test_unseen,
        feature_dim=store.dim,
        node_feature_dim=int(np.asarray(node_features).shape[1]),
    )
