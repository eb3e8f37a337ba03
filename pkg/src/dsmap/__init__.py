"""Disentangled two-domain image translation with domain-specific content mappings."""

from .losses import LossWeights, total_losses
from .model import DSMAP, ContentCode, Domain, ModelConfig, TagError, sample_style
from .training import TrainConfig, TrainState, fit, forward_all, load_model, train_step

__all__ = [
    "DSMAP", "ContentCode", "Domain", "LossWeights", "ModelConfig", "TagError", "TrainConfig",
    "TrainState", "fit", "forward_all", "load_model", "sample_style", "total_losses", "train_step",
]
__version__ = "0.1.0"
