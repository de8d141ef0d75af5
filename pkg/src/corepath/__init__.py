"""Biopsy whole-slide analysis toolkit.

Pipeline stages: synthetic slide generation, tissue/pen segmentation,
pen-mark digitization into label masks, patch extraction, two-stage patch
classification, slide-level aggregation (detection, length, grading),
evaluation metrics, and confidence-mask rendering.
"""

__version__ = "0.1.0"

from corepath.slidepack import (
    BinaryMask,
    ImagePyramid,
    LabelMask,
    SlidePackError,
    load_slidepack,
    read_region,
    save_slidepack,
)

__all__ = [
    "BinaryMask",
    "ImagePyramid",
    "LabelMask",
    "SlidePackError",
    "load_slidepack",
    "read_region",
    "save_slidepack",
    "__version__",
]
