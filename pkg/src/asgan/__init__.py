"""Attribute-guided face-to-sketch translation with a weight-shared W-net."""
from .data import ATTRIBUTES, TASKS, AttributeLabel, TaskConfig, Triplet
from .networks import build_discriminator, build_pipeline, build_wnet
from .training import TrainConfig, checkpoint_load, checkpoint_save, train

__version__ = "0.1.0"

__all__ = [
    "ATTRIBUTES", "TASKS", "AttributeLabel", "TaskConfig", "TrainConfig", "Triplet",
    "build_discriminator", "build_pipeline", "build_wnet", "checkpoint_load",
    "checkpoint_save", "train",
]
