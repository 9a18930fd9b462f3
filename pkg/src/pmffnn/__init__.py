"""Parallel multi-path feed-forward networks for wide tabular data, in numpy."""

__version__ = "0.1.0"

from .config import ArchConfig, ConvSpec, HeadSpec, PathwaySpec, figure1_config  # noqa: E402
from .layers import LayerSpec, Mode, param_count  # noqa: E402
from .model_graph import ColumnGroups, ModelGraph, build_model, count_parameters, split_columns  # noqa: E402
from .training import TrainConfig, fit  # noqa: E402

__all__ = [
    "ArchConfig",
    "ColumnGroups",
    "ConvSpec",
    "HeadSpec",
    "LayerSpec",
    "Mode",
    "ModelGraph",
    "PathwaySpec",
    "TrainConfig",
    "build_model",
    "count_parameters",
    "figure1_config",
    "fit",
    "param_count",
    "split_columns",
]
