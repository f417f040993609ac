"""Sampling images and volumes at physical points, and grid resampling."""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage as ndi

from .containers import Geometry, VoxelVolume, from_geometry

METHODS = ("nearest", "linear", "cubic_spline")


def _check_method(method: str) -> str:
    if method not in METHODS:
        raise ValueError(f"unknown interpolation method {method!r}; choose from {METHODS}")
    return method


def spline_coefficients(array: np.ndarray) -> np.ndarray:
    """Cubic B-spline coefficients of a (single-channel) sample array.

    Uses the causal/anti-causal recursive prefilter with pole sqrt(3) - 2 and
    mirror boundaries, so that evaluating the spline at the grid nodes gives
    back the samples.
    """
    return ndi.spline_filter(np.asarray(array, dtype=np.float64), order=3, mode="mirror")


def sample_index(array: np.ndarray, index: np.ndarray, method: str = "linear", coeffs=None) -> np.ndarray:
    """Sample a single-channel array at continuous indices (last axis = dims).

    No out-of-bounds handling beyond edge clamping; callers zero samples that
    fall outside the grid.
    """
    _check_method(method)
    array = np.asarray(array, dtype=np.float64)
    index = np.asarray(index, dtype=np.float64)
    lead = index.shape[:-1]
    coords = index.reshape(-1, array.ndim).T
    if method == "nearest":
        ijk = tuple(
            np.clip(np.floor(c + 0.5).astype(np.intp), 0, n - 1) for c, n in zip(coords, array.shape)
        )
        return array[ijk].reshape(lead)
    if method == "linear":
        out = ndi.map_coordinates(array, coords, order=1, mode="nearest")
    else:
        c = spline_coefficients(array) if coeffs is None else coeffs
        out = ndi.map_coordinates(c, coords, order=3, mode="mirror", prefilter=False)
    return out.reshape(lead)


def interpolate(grid, points_mm, method: str = "linear", background: float = 0.0) -> np.ndarray:
    """Sample a RasterImage/VoxelVolume at physical points (mm).

    Points outside the voxel box return ``background``. For multi-channel
    containers the channel axis is appended to the output.
    """
    _check_method(method)
    geom = grid.geometry
    points_mm = np.asarray(points_mm, dtype=float)
    if points_mm.shape[-1] != geom.ndim:
        raise ValueError(f"points need {geom.ndim} components, got {points_mm.shape[-1]}")
    index = geom.to_index(points_mm)
    inside = geom.in_bounds(points_mm)
    outs = []
    for c in range(grid.channels):
        vals = sample_index(grid.channel(c), index, method)
        outs.append(np.where(inside, vals, background))
    return outs[0] if grid.channels == 1 else np.stack(outs, axis=-1)


def resampled_geometry(geometry: Geometry, target_spacing) -> Geometry:
    """Same origin and physical extent; dims = ceil(extent / spacing)."""
    spacing = np.broadcast_to(np.asarray(target_spacing, dtype=float), (geometry.ndim,))
    if np.any(spacing <= 0):
        raise ValueError("target spacing must be strictly positive")
    # guard against 240/0.33-style round-off pushing an exact ratio up by one
    dims = [max(1, math.ceil(e / s - 1e-9)) for e, s in zip(geometry.extent, spacing)]
    return Geometry(tuple(dims), tuple(spacing), geometry.origin)


def resample_to(
    grid, geometry: Geometry, method: str = "cubic_spline", background: float = 0.0, slab: int = 16, clamp=False
):
    """Resample onto an axis-aligned target grid, processing slabs along axis 0.

    With ``clamp`` set, target nodes beyond the source box are pulled back onto
    its boundary instead of receiving ``background``.
    """
    _check_method(method)
    src = grid.geometry
    channels = grid.channels
    coeffs = [spline_coefficients(grid.channel(c)) if method == "cubic_spline" else None for c in range(channels)]
    out_shape = geometry.shape + ((channels,) if channels > 1 else ())
    out = np.empty(out_shape, dtype=np.float64)
    axes = [
        o + (np.arange(n) + 0.5) * s for n, s, o in zip(geometry.shape, geometry.spacing, geometry.origin)
    ]
    for start in range(0, geometry.shape[0], slab):
        stop = min(start + slab, geometry.shape[0])
        pts = np.stack(np.meshgrid(axes[0][start:stop], *axes[1:], indexing="ij"), axis=-1)
        index = src.to_index(pts)
        if clamp:
            index = np.clip(index, -0.5, np.asarray(src.shape) - 0.5)
            inside = np.ones(index.shape[:-1], bool)
        else:
            inside = src.in_bounds(pts)
        for c in range(channels):
            vals = sample_index(grid.channel(c), index, method, coeffs[c])
            vals = np.where(inside, vals, background)
            if channels > 1:
                out[start:stop, ..., c] = vals
            else:
                out[start:stop] = vals
    orientation = getattr(grid, "orientation", "axial")
    return from_geometry(out, geometry, orientation)


def resample_volume(volume, target_spacing, method: str = "cubic_spline"):
    """Resample to a new spacing covering the same physical extent."""
    geometry = resampled_geometry(volume.geometry, target_spacing)
    if geometry == volume.geometry:
        return volume.replace() if isinstance(volume, VoxelVolume) else volume
    # ceil() can make the last node overhang the source box by < 1 voxel
    return resample_to(volume, geometry, method, clamp=True)
