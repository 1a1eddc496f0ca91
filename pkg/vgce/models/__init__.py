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
from vgce.models.graph import ConceptGraph, build_graph
from vgce.models.params import EncoderParams, MLPParams, ModelParams, ProjectionParams

__all__ = [
    "CompositionLabel",
    "ConceptVocabulary",
    "DatasetSplits",
    "FeatureStore",
    "Split",
    "World",
    "all_pairs",
    "output_space",
    "ConceptGraph",
    "build_graph",
    "EncoderParams",
    "MLPParams",
    "ModelParams",
    "ProjectionParams",
]
