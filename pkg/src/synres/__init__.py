"""Synthetic triplet generation pipeline for referring segmentation.

Generates densely paired image-expression-mask training triplets through
three stages: expression and image synthesis via pluggable model clients,
consensus grouping of expressions whose pseudo-masks agree, and mosaic plus
superclass text augmentation. Runs fully deterministic and GPU-free with the
bundled mock client suite.
"""

__version__ = "0.1.0"

from .core import (
    BinaryMask,
    DatasetManifest,
    Expression,
    RasterMask,
    ReferringTarget,
    SyntheticBatch,
    TripletRecord,
    rle_decode,
    rle_encode,
    validate_manifest,
)
from .maskops import MiouMatrix, average_and_refine, binarize, iou, miou_matrix

__all__ = [
    "BinaryMask",
    "DatasetManifest",
    "Expression",
    "MiouMatrix",
    "RasterMask",
    "ReferringTarget",
    "SyntheticBatch",
    "TripletRecord",
    "average_and_refine",
    "binarize",
    "iou",
    "miou_matrix",
    "rle_decode",
    "rle_encode",
    "validate_manifest",
    "__version__",
]
