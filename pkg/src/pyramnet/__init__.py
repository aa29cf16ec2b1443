"""PyramNet point-cloud classification and segmentation on a numpy autodiff core."""

from .errors import CheckFailure, CheckpointError, ConfigError, DataError, PyramNetError
from .gem import choose_k, gem_forward
from .model import ModelConfig, PyramNet
from .pan import PyramidConfig
from .train import RunConfig, evaluate

__version__ = "0.1.0"

__all__ = [
    "CheckFailure",
    "CheckpointError",
    "ConfigError",
    "DataError",
    "ModelConfig",
    "PyramNet",
    "PyramNetError",
    "PyramidConfig",
    "RunConfig",
    "choose_k",
    "evaluate",
    "gem_forward",
]
