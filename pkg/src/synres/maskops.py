"""Mask algebra: thresholding, IoU, pairwise mean-IoU grids, group refinement.

All counting is exact 64-bit integer arithmetic; floats appear only in the
final divisions. The pairwise and averaging kernels run through numba when it
is importable; set SYNRES_NUMBA=0 to force the pure numpy path. Both backends
return bit-identical results.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .core import BinaryMask, DataError, DimensionMismatch, EmptyInput, RasterMask

IOU_EMPTY_ZERO = "zero"
IOU_EMPTY_ONE = "one"

if os.environ.get("SYNRES_NUMBA", "1").lower() in ("0", "false", "off"):
    from . import _kernels_np as _kernels

    BACKEND = "numpy"
else:
    try:
        from . import _kernels_numba as _kernels

        BACKEND = "numba"
    except ImportError:
        from . import _kernels_np as _kernels

        BACKEND = "numpy"


def warmup() -> str:
    """Compile the active kernels on tiny inputs; returns the backend name."""
    _kernels.pairwise_iou_unit(np.zeros((1, 1), np.bool_))
    _kernels.group_mean(np.zeros((1, 1), np.float64))
    return BACKEND


@dataclass(frozen=True, eq=False)
class MiouMatrix:
    """Symmetric matrix of mean-over-images IoU between expression pairs."""

    n: int
    entries: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.float64)
        if entries.shape != (self.n, self.n):
            raise DimensionMismatch(f"expected a {self.n}x{self.n} matrix")
        if not np.array_equal(entries, entries.T):
            raise DataError("mean-IoU matrix must be symmetric")
        if not np.all(np.diagonal(entries) == 1.0):
            raise DataError("mean-IoU matrix must have a unit diagonal")
        if entries.min() < 0.0 or entries.max() > 1.0:
            raise DataError("mean-IoU entries must lie in [0, 1]")
        entries = np.ascontiguousarray(entries)
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)


def binarize(mask: RasterMask, threshold: float = 0.5) -> BinaryMask:
    """Set a bit wherever the confidence is at least the threshold."""
    if not 0.0 < threshold < 1.0:
        raise DataError("threshold must lie strictly between 0 and 1")
    return BinaryMask(mask.width, mask.height, mask.values >= threshold)


def iou(a: BinaryMask, b: BinaryMask, empty_policy: str = IOU_EMPTY_ZERO) -> float:
    """Intersection over union of two equally sized binary masks.

    When both masks are empty the union is empty; the policy decides whether
    that counts as perfect agreement (1.0) or as failure (0.0).
    """
    if empty_policy not in (IOU_EMPTY_ZERO, IOU_EMPTY_ONE):
        raise DataError(f"unknown empty policy {empty_policy!r}")
    if (a.width, a.height) != (b.width, b.height):
        raise DimensionMismatch(
            f"{a.width}x{a.height} vs {b.width}x{b.height}"
        )
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        return 1.0 if empty_policy == IOU_EMPTY_ONE else 0.0
    inter = int(np.count_nonzero(a.bits & b.bits))
    return inter / union


def miou_matrix(pseudo_masks, threshold: float = 0.5) -> MiouMatrix:
    """Mean-over-images pairwise IoU for an m-images by n-expressions grid.

    Each raster is binarized at the threshold first; empty pairs score 0 so
    degenerate segmentations cannot agree with anything. The diagonal is
    pinned to 1.0 (an expression is trivially consistent with itself).
    """
    grid = [tuple(row) for row in pseudo_masks]
    if not grid or not grid[0]:
        raise EmptyInput("pseudo-mask grid is empty")
    n = len(grid[0])
    if any(len(row) != n for row in grid):
        raise DimensionMismatch("pseudo-mask grid is ragged")
    acc = np.zeros((n, n), dtype=np.float64)
    for row in grid:
        w, h = row[0].width, row[0].height
        if any((m.width, m.height) != (w, h) for m in row):
            raise DimensionMismatch("masks for one image disagree on dimensions")
        stacked = np.stack([m.values.reshape(-1) for m in row])
        bits = np.ascontiguousarray(stacked >= threshold)
        acc += _kernels.pairwise_iou_unit(bits)
    acc /= len(grid)
    np.fill_diagonal(acc, 1.0)
    return MiouMatrix(n=n, entries=acc)


def average_and_refine(masks, threshold: float = 0.5) -> BinaryMask:
    """Pixelwise mean of the rasters, then binarize at the threshold."""
    masks = list(masks)
    if not masks:
        raise EmptyInput("no masks to average")
    w, h = masks[0].width, masks[0].height
    if any((m.width, m.height) != (w, h) for m in masks):
        raise DimensionMismatch("group masks disagree on dimensions")
    if not 0.0 < threshold < 1.0:
        raise DataError("threshold must lie strictly between 0 and 1")
    stacked = np.ascontiguousarray(np.stack([m.values.reshape(-1) for m in masks]))
    mean = _kernels.group_mean(stacked)
    return BinaryMask(w, h, mean >= threshold)
