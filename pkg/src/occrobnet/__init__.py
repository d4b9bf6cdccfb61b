"""Occlusion-robust hand and object pose estimation on synthetic scenes, in numpy."""

from .config import RunConfig, load_config, parse_config
from .errors import (ConfigError, ContractError, DatasetFormatError, DimensionError, NonFiniteError,
                     OccRobNetError, UnsupportedOpError)
from .evaluation import evaluate_model, evaluate_predictions
from .model import OccRobNet, Prediction, SceneTargets
from .synthdata import Scene, generate_dataset, generate_scene, read_dataset, write_dataset
from .training import train

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "load_config", "parse_config",
    "ConfigError", "ContractError", "DatasetFormatError", "DimensionError", "NonFiniteError",
    "OccRobNetError", "UnsupportedOpError",
    "evaluate_model", "evaluate_predictions",
    "OccRobNet", "Prediction", "SceneTargets",
    "Scene", "generate_dataset", "generate_scene", "read_dataset", "write_dataset",
    "train",
]
