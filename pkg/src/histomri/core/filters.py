"""Gaussian smoothing and multi-resolution pyramids."""

from __future__ import annotations

import numpy as np
from scipy import ndimage as ndi

from ..errors import LevelTooCoarse
from .containers import BinaryMask, Geometry, from_geometry, like
from .interpolation import resample_to

MIN_PYRAMID_DIM = 8


def smooth_array(array: np.ndarray, sigma_vox, spatial_ndim: int | None = None) -> np.ndarray:
    """Gaussian filter over the spatial axes only (mirror boundaries)."""
    array = np.asarray(array, dtype=np.float64)
    nd = array.ndim if spatial_ndim is None else spatial_ndim
    sig = list(np.broadcast_to(np.asarray(sigma_vox, dtype=float), (nd,)))
    if not any(s > 0 for s in sig):
        return array.copy()
    sig += [0.0] * (array.ndim - nd)
    return ndi.gaussian_filter(array, sig, mode="reflect", truncate=4.0)


def gaussian_smooth(grid, sigma_mm: float):
    """Smooth with an isotropic Gaussian of standard deviation ``sigma_mm``.

    ``sigma_mm = 0`` returns an identical copy. The kernel is normalised and
    non-negative, so the output stays within the input's range.
    """
    if sigma_mm < 0:
        raise ValueError("sigma must be >= 0")
    sigma_vox = [sigma_mm / s for s in grid.spacing]
    return like(grid, smooth_array(grid.data, sigma_vox, len(grid.shape)))


def downsample2(grid):
    """One pyramid step: smooth with sigma = 1 voxel, then halve the sampling."""
    geom = grid.geometry
    new_shape = tuple(-(-n // 2) for n in geom.shape)
    target = Geometry(new_shape, tuple(2 * s for s in geom.spacing), geom.origin)
    if isinstance(grid, BinaryMask):
        smoothed = from_geometry(grid.data.astype(np.float64), geom)
        low = resample_to(smoothed, target, "linear")
        return BinaryMask(low.data > 0, target.spacing, target.origin)
    smoothed = like(grid, smooth_array(grid.data, 1.0, len(geom.shape)))
    return resample_to(smoothed, target, "linear")


def build_pyramid(grid, levels: int) -> list:
    """``[level0 (original), level1, ...]``; level k has spacing x 2**k.

    Raises LevelTooCoarse if any axis of the coarsest level drops below 8.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    shape = np.asarray(grid.shape)
    for _ in range(levels - 1):
        shape = -(-shape // 2)
    if levels > 1 and np.any(shape < MIN_PYRAMID_DIM):
        raise LevelTooCoarse(
            f"{levels} levels would reduce {tuple(grid.shape)} to {tuple(int(s) for s in shape)}"
        )
    out = [grid]
    for _ in range(levels - 1):
        out.append(downsample2(out[-1]))
    return out


def max_levels(shape, requested: int) -> int:
    """Largest level count <= requested that keeps every axis >= 8."""
    levels = 1
    s = np.asarray(shape)
    while levels < requested:
        s = -(-s // 2)
        if np.any(s < MIN_PYRAMID_DIM):
            break
        levels += 1
    return levels
