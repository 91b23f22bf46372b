"""Hyperspectral/RGB fusion object tracker with spectral-angle awareness."""

__version__ = "0.1.0"

from .config import Config
from .data import (BoundingBox, Frame, HSCube, RGBImage, Sequence, SynthConfig,
                   crop_search, crop_template, load_sequence, save_sequence,
                   synth_sequence)
from .model import TrackerModel
from .sam import sam_fit, sam_score, sam_score_map

__all__ = [
    "BoundingBox",
    "Config",
    "Frame",
    "HSCube",
    "RGBImage",
    "Sequence",
    "SynthConfig",
    "TrackerModel",
    "crop_search",
    "crop_template",
    "load_sequence",
    "save_sequence",
    "synth_sequence",
    "sam_fit",
    "sam_score",
    "sam_score_map",
    "__version__",
]
