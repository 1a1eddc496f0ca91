"""
VGCE - Variational Graph Compositional Embeddings
Compositional zero-shot recognition from a graph of primitive concepts
"""

__version__ = "1.0.0"
