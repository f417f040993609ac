"""Connected-component and hole cleanup for binary masks."""

from __future__ import annotations

import numpy as np
from scipy import ndimage as ndi

from ..core.containers import BinaryMask


def largest_component(data: np.ndarray) -> np.ndarray:
    """Largest face-connected (4/6-neighbour) component; ties go to the lowest label."""
    labels, n = ndi.label(data, structure=ndi.generate_binary_structure(data.ndim, 1))
    if n <= 1:
        return labels > 0
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)


def fill_holes(data: np.ndarray) -> np.ndarray:
    """Fill background regions not connected to the border (8/26-neighbour background)."""
    return ndi.binary_fill_holes(data, structure=np.ones((3,) * data.ndim, bool))


def fill_small_holes(data: np.ndarray, max_size: int) -> np.ndarray:
    """Fill enclosed holes of at most ``max_size`` pixels."""
    holes = fill_holes(data) & ~data
    labels, n = ndi.label(holes, structure=np.ones((3,) * data.ndim, bool))
    if n == 0:
        return data.copy()
    sizes = np.bincount(labels.ravel())
    small = sizes <= max_size
    small[0] = False
    return data | small[labels]


def morphological_cleanup(mask: BinaryMask, keep_largest: bool = True, fill: bool = True) -> BinaryMask:
    """Keep the largest component and/or fill enclosed holes."""
    data = np.asarray(mask.data, bool)
    if not data.any():
        return BinaryMask.like(mask, data)
    if keep_largest:
        data = largest_component(data)
    if fill:
        data = fill_holes(data)
    return BinaryMask.like(mask, data)


def ball(radius_mm: float, spacing) -> np.ndarray:
    """Ellipsoidal structuring element covering a physical ball."""
    r = [max(0, int(np.floor(radius_mm / s))) for s in spacing]
    grids = np.meshgrid(*[np.arange(-k, k + 1) * s for k, s in zip(r, spacing)], indexing="ij")
    return sum(g**2 for g in grids) <= radius_mm**2 + 1e-9


def closing(data: np.ndarray, radius_mm: float, spacing) -> np.ndarray:
    """Binary closing with a physical ball, padded so borders do not erode."""
    se = ball(radius_mm, spacing)
    pad = [(k // 2 + 1,) * 2 for k in se.shape]
    padded = np.pad(data, pad)
    closed = ndi.binary_erosion(ndi.binary_dilation(padded, se), se)
    return closed[tuple(slice(p[0], p[0] + n) for p, n in zip(pad, data.shape))]
