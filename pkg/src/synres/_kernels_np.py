"""Pure numpy implementations of the hot mask kernels.

Arithmetic order matches the numba twins exactly (integer counts, one float
division per pair, sequential accumulation over group members) so the two
backends produce bit-identical results.
"""

import numpy as np


def pairwise_iou_unit(bits: np.ndarray) -> np.ndarray:
    """Pairwise IoU over the rows of an (n, npix) bool matrix.

    Pairs with an empty union score 0.0; the diagonal is 1.0 for non-empty
    rows and 0.0 for empty ones.
    """
    ints = bits.astype(np.int64)
    inter = ints @ ints.T
    counts = np.diagonal(inter)
    union = counts[:, None] + counts[None, :] - inter
    out = np.zeros(inter.shape, dtype=np.float64)
    nz = union > 0
    out[nz] = inter[nz] / union[nz]
    return out


def group_mean(values: np.ndarray) -> np.ndarray:
    """Per-pixel mean over the rows of a (k, npix) float64 matrix."""
    acc = np.zeros(values.shape[1], dtype=np.float64)
    for row in values:
        acc += row
    return acc / values.shape[0]
