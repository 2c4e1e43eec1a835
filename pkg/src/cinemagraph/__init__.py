"""Single-image cinemagraph generation with a recurrent encoder-decoder."""
from .model import ModelConfig, Params, init_params
from .synthetic import PatternKind, generate_sample
from .training import TrainConfig, generate, train

__all__ = ["ModelConfig", "Params", "PatternKind", "TrainConfig", "generate", "generate_sample", "init_params", "train"]
__version__ = "0.1.0"
