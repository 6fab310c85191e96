"""Attribute-controllable image generation from bounding-box layouts."""

from .config import ModelConfig, TrainingConfig, model_preset, training_preset
from .layout import (
    BBox,
    Canvas,
    Layout,
    ObjectSpec,
    ShiftSpec,
    Vocabulary,
    bbox_to_grid,
    parse_layout,
    sample_shifts,
    serialize_layout,
    shift_layout,
    validate_layout,
)
from .prior import AttributePrior, estimate_attribute_prior, sample_attributes

__all__ = [
    "AttributePrior",
    "BBox",
    "Canvas",
    "Layout",
    "ModelConfig",
    "ObjectSpec",
    "ShiftSpec",
    "TrainingConfig",
    "Vocabulary",
    "bbox_to_grid",
    "estimate_attribute_prior",
    "model_preset",
    "parse_layout",
    "sample_attributes",
    "sample_shifts",
    "serialize_layout",
    "shift_layout",
    "training_preset",
    "validate_layout",
]

__version__ = "0.1.0"
