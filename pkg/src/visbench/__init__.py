"""Dataset-agnostic evaluation engine for image recognition challenges."""

__version__ = "0.1.0"

from .geometry import BoundingBox, ImageRef, ScoredBox, box_area_fraction, iou
from .hierarchy import SynsetGraph, UnknownCategoryError
from .ingest import (
    CLASSIFICATION,
    DETECTION,
    LOCALIZATION,
    ClassificationSubmission,
    DetectionSubmission,
    FormatError,
    GroundTruthStore,
    LocalizationSubmission,
    load_ground_truth,
)

__all__ = [
    "__version__",
    "BoundingBox",
    "ImageRef",
    "ScoredBox",
    "box_area_fraction",
    "iou",
    "SynsetGraph",
    "UnknownCategoryError",
    "CLASSIFICATION",
    "DETECTION",
    "LOCALIZATION",
    "ClassificationSubmission",
    "DetectionSubmission",
    "FormatError",
    "GroundTruthStore",
    "LocalizationSubmission",
    "load_ground_truth",
]
