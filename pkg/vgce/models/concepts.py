#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Concept Vocabulary and Dataset Splits
States, objects, their compositions, and the seen/unseen split of a dataset
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List, Sequence, Tuple

import numpy as np

from vgce.core.exceptions import (
    DanglingReferenceError,
    ShapeMismatchError,
    SplitViolationError,
    VocabularyError,
)


class World(str, Enum):
    """Output space used for prediction."""
    CLOSED = "closed"
    OPEN = "open"


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


@dataclass(frozen=True)
class ConceptVocabulary:
    """Ordered state and object names. Graph node order is states then objects."""
    states: Tuple[str, ...]
    objects: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "objects", tuple(self.objects))
        for kind, names in (("state", self.states), ("object", self.objects)):
            if not names:
                raise VocabularyError(f"vocabulary needs at least one {kind}")
            if any(not isinstance(n, str) or not n for n in names):
                raise VocabularyError(f"{kind} names must be non-empty strings")
            if len(set(names)) != len(names):
                raise VocabularyError(f"duplicate {kind} names")

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_objects(self) -> int:
        return len(self.objects)

    @property
    def n_nodes(self) -> int:
        return self.n_states + self.n_objects

    def object_node(self, object_idx: int) -> int:
        """Global node index of an object."""
        return self.n_states + object_idx

    def pair_name(self, label: "CompositionLabel") -> str:
        return f"{self.states[label.state_idx]} {self.objects[label.object_idx]}"


@dataclass(frozen=True, order=True)
class CompositionLabel:
    state_idx: int
    object_idx: int

    def check(self, vocab: ConceptVocabulary) -> None:
        if not (0 <= self.state_idx < vocab.n_states and 0 <= self.object_idx < vocab.n_objects):
            raise VocabularyError(
                f"label ({self.state_idx}, {self.object_idx}) outside vocabulary "
                f"of {vocab.n_states} states and {vocab.n_objects} objects"
            )


Sample = Tuple[int, CompositionLabel]


def all_pairs(vocab: ConceptVocabulary) -> List[CompositionLabel]:
    """S x O in (state, object) row-major order."""
    return [CompositionLabel(s, o) for s in range(vocab.n_states) for o in range(vocab.n_objects)]


@dataclass(frozen=True)
class DatasetSplits:
    seen_pairs: FrozenSet[CompositionLabel]
    unseen_pairs: FrozenSet[CompositionLabel]
    train_samples: Tuple[Sample, ...]
    val_samples: Tuple[Sample, ...]
    test_samples: Tuple[Sample, ...]
    world: World = World.CLOSED

    def __post_init__(self):
        object.__setattr__(self, "seen_pairs", frozenset(self.seen_pairs))
        object.__setattr__(self, "unseen_pairs", frozenset(self.unseen_pairs))
        for name in ("train_samples", "val_samples", "test_samples"):
            object.__setattr__(self, name, tuple((int(i), lbl) for i, lbl in getattr(self, name)))
        object.__setattr__(self, "world", World(self.world))

    def validate(self, vocab: ConceptVocabulary) -> None:
        """Raise if any split invariant is broken."""
        for label in self.seen_pairs | self.unseen_pairs:
            label.check(vocab)
        overlap = self.seen_pairs & self.unseen_pairs
        if overlap:
            first = min(overlap)
            raise SplitViolationError(
                f"{len(overlap)} pairs are both seen and unseen, e.g. ({first.state_idx}, {first.object_idx})"
            )
        known = self.seen_pairs | self.unseen_pairs
        for split, allowed in ((Split.TRAIN, self.seen_pairs), (Split.VAL, known), (Split.TEST, known)):
            for image_id, label in self.samples(split):
                label.check(vocab)
                if label not in allowed:
                    where = "seen pairs" if split is Split.TRAIN else "seen or unseen pairs"
                    raise SplitViolationError(
                        f"{split.value} image {image_id} has label ({label.state_idx}, {label.object_idx}) not in {where}"
                    )

    def samples(self, split: Split) -> Tuple[Sample, ...]:
        return {
            Split.TRAIN: self.train_samples,
            Split.VAL: self.val_samples,
            Split.TEST: self.test_samples,
        }[Split(split)]

    def labels(self, split: Split) -> List[CompositionLabel]:
        return [lbl for _, lbl in self.samples(split)]

    def image_ids(self, split: Split) -> np.ndarray:
        return np.array([i for i, _ in self.samples(split)], dtype=np.int64)

    def output_space(self, vocab: ConceptVocabulary, world: World = None) -> List[CompositionLabel]:
        return output_space(vocab, self, world or self.world)

    def hypothetical_pairs(self, vocab: ConceptVocabulary) -> List[CompositionLabel]:
        """Pairs with no images at all; they only exist in the open world."""
        known = self.seen_pairs | self.unseen_pairs
        return [p for p in all_pairs(vocab) if p not in known]

    def seen_mask(self, pairs: Sequence[CompositionLabel]) -> np.ndarray:
        return np.array([p in self.seen_pairs for p in pairs], dtype=bool)

    def with_world(self, world: World) -> "DatasetSplits":
        return DatasetSplits(
            self.seen_pairs, self.unseen_pairs, self.train_samples, self.val_samples, self.test_samples, World(world)
        )


def output_space(vocab: ConceptVocabulary, splits: DatasetSplits, world: World) -> List[CompositionLabel]:
    """Candidate pairs: sorted Y_s ∪ Y_u in the closed world, all of S x O in the open world."""
    if World(world) is World.OPEN:
        return all_pairs(vocab)
    return sorted(splits.seen_pairs | splits.unseen_pairs)


def pair_columns(pairs: Iterable[CompositionLabel]) -> Dict[CompositionLabel, int]:
    return {p: i for i, p in enumerate(pairs)}


@dataclass(frozen=True)
class FeatureStore:
    """Image feature rows; image ids are row indices."""
    features: np.ndarray
    image_ids: Tuple[int, ...] = field(default=())

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float32)
        if feats.ndim != 2:
            raise ShapeMismatchError("features.bin", f"expected a matrix, got {feats.ndim} dimensions")
        if not np.all(np.isfinite(feats)):
            raise ShapeMismatchError("features.bin", "contains non-finite values")
        feats = feats.copy()
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        ids = tuple(self.image_ids) or tuple(range(feats.shape[0]))
        if len(ids) != feats.shape[0]:
            raise ShapeMismatchError("features.bin", f"{feats.shape[0]} rows for {len(ids)} image ids")
        object.__setattr__(self, "image_ids", ids)

    @property
    def n_images(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def rows(self, image_ids: Sequence[int]) -> np.ndarray:
        """Features of the given images as float64."""
        ids = np.asarray(image_ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.n_images):
            raise DanglingReferenceError(f"image id outside 0..{self.n_images - 1}")
        return self.features[ids].astype(np.float64)
