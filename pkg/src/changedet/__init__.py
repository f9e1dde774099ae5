"""Desk-scale bi-temporal change detection with offset cross attention."""

from .config import RunConfig, load_config, save_config
from .model import ChangeDetector, ModelOutput
from .synth import Difficulty, SamplePair, generate_dataset, generate_pair
from .tensor import ConfigError, ShapeError, Tensor
from .training import TrainResult, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "ChangeDetector",
    "ConfigError",
    "Difficulty",
    "ModelOutput",
    "RunConfig",
    "SamplePair",
    "ShapeError",
    "TrainResult",
    "Tensor",
    "evaluate",
    "generate_dataset",
    "generate_pair",
    "load_config",
    "save_config",
    "train",
]
