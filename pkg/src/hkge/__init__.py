"""Hyperbolic hierarchical knowledge graph embeddings.

Training and evaluation of translation-style KGE models on the Poincare
ball with learnable per-triple curvature, plus graph-level hierarchy
diagnostics (Krackhardt score, sectional-curvature sampling).
"""

from .model import KGEModel, ModelConfig
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = ["KGEModel", "ModelConfig", "TrainConfig", "train", "__version__"]
