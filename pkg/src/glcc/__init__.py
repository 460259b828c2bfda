"""Semi-supervised multi-feature classification with a globally consistent label matrix."""

__version__ = "0.1.0"

from .config import TrainConfig
from .data import (
    FeatureView,
    MultiFeatureDataset,
    SplitSpec,
    SyntheticSpec,
    apply_split,
    generate_synthetic,
    load_dataset,
)
from .errors import ConfigError, DataError, GLCCError, NumericalError, ParameterError
from .evaluation import EvalReport, GridResult, grid_search, score, sweep_labeled_fraction
from .graphs import (
    GraphSet,
    build_adjacency,
    build_graphs,
    build_laplacian,
    estimate_hessian_energy,
    load_graph_cache,
    save_graph_cache,
)
from .model import (
    ConvergenceTrace,
    ModelParams,
    load_model,
    objective,
    predict,
    predict_batch,
    save_model,
    train,
)

__all__ = [
    "ConfigError",
    "ConvergenceTrace",
    "DataError",
    "EvalReport",
    "FeatureView",
    "GLCCError",
    "GraphSet",
    "GridResult",
    "ModelParams",
    "MultiFeatureDataset",
    "NumericalError",
    "ParameterError",
    "SplitSpec",
    "SyntheticSpec",
    "TrainConfig",
    "apply_split",
    "build_adjacency",
    "build_graphs",
    "build_laplacian",
    "estimate_hessian_energy",
    "generate_synthetic",
    "grid_search",
    "load_dataset",
    "load_graph_cache",
    "load_model",
    "objective",
    "predict",
    "predict_batch",
    "save_graph_cache",
    "save_model",
    "score",
    "sweep_labeled_fraction",
    "train",
]
