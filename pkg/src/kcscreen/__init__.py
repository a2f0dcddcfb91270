"""Keratoconus screening from Placido-ring reflections.

Pixel segmentation with a CART tree, morphological cleanup, orientation
correction, a two-cluster shape classifier and a per-cell logistic
localizer over inter-ring distances, plus a synthetic scene generator.
"""

from .config import PipelineConfig, load_config
from .pipeline import Diagnosis, Models, Scene, diagnose, preprocess, train_all

__version__ = "0.1.0"

__all__ = [
    "Diagnosis", "Models", "PipelineConfig", "Scene", "diagnose", "load_config", "preprocess",
    "train_all",
]
