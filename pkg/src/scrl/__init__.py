"""Semi-supervised node classification with topology/feature consensus learning."""

from .errors import (CheckpointError, NumericalError, ParameterError, ScrlError,
                     ShapeError, ValidationError)
from .graph import (DatasetBundle, FeatureGraph, build_knn_graph, cosine_similarity,
                    load_dataset, make_splits, normalize_adjacency)
from .model import ScrlModel, init_params
from .sinkhorn import SinkhornConfig, marginal_errors, sinkhorn_assign
from .training import EpochMetrics, TrainConfig, evaluate, train

__version__ = "0.1.0"
