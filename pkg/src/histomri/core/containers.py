"""Geometric containers for 2D images, 3D volumes and binary masks.

Physical-space convention used throughout the package:

* array axis ``a`` maps to physical axis ``a``; points in mm are given with
  their components in array-axis order (``(row, col)`` for 2D images);
* ``origin`` is the outer corner of the voxel box, so the centre of voxel
  ``i`` along axis ``a`` sits at ``origin[a] + (i + 0.5) * spacing[a]``;
* the physical extent of a grid is ``shape * spacing``.

Containers are immutable: their sample arrays are flagged read-only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ORIENTATIONS = ("axial", "sagittal", "coronal")


@dataclass(frozen=True)
class Geometry:
    """Sampling grid: shape, per-axis spacing (mm) and corner origin (mm)."""

    shape: tuple[int, ...]
    spacing: tuple[float, ...]
    origin: tuple[float, ...] = ()

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin) or (0.0,) * len(shape)
        if not (len(shape) == len(spacing) == len(origin)):
            raise ValueError("shape, spacing and origin must have equal length")
        if any(n < 1 for n in shape):
            raise ValueError(f"grid dims must be >= 1, got {shape}")
        if any(not np.isfinite(s) or s <= 0 for s in spacing):
            raise ValueError(f"spacing must be strictly positive, got {spacing}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.shape) * np.asarray(self.spacing)

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.origin) + 0.5 * self.extent

    @property
    def voxel_volume(self) -> float:
        return float(np.prod(self.spacing))

    def to_index(self, points_mm) -> np.ndarray:
        """Continuous array indices of physical points (last axis = components)."""
        p = np.asarray(points_mm, dtype=float)
        return (p - np.asarray(self.origin)) / np.asarray(self.spacing) - 0.5

    def to_mm(self, index) -> np.ndarray:
        i = np.asarray(index, dtype=float)
        return np.asarray(self.origin) + (i + 0.5) * np.asarray(self.spacing)

    def points(self) -> np.ndarray:
        """Physical coordinates of every grid node, shape ``(*shape, ndim)``."""
        axes = [
            o + (np.arange(n) + 0.5) * s
            for n, s, o in zip(self.shape, self.spacing, self.origin)
        ]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def in_bounds(self, points_mm) -> np.ndarray:
        idx = self.to_index(points_mm)
        n = np.asarray(self.shape)
        return np.all((idx >= -0.5) & (idx <= n - 0.5), axis=-1)

    def with_spacing(self, spacing) -> "Geometry":
        return Geometry(self.shape, tuple(spacing), self.origin)

    def to_dict(self) -> dict:
        return {"shape": list(self.shape), "spacing": list(self.spacing), "origin": list(self.origin)}

    @classmethod
    def from_dict(cls, d) -> "Geometry":
        return cls(tuple(d["shape"]), tuple(d["spacing"]), tuple(d.get("origin", ())))


def _frozen(array: np.ndarray, dtype=None) -> np.ndarray:
    a = np.array(array, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


class _GridData:
    """Behaviour shared by the sampled containers."""

    data: np.ndarray
    spatial_ndim: int = 0

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape[: self.spatial_ndim])

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == self.spatial_ndim else int(self.data.shape[-1])

    @property
    def geometry(self) -> Geometry:
        return Geometry(self.shape, self.spacing, self.origin)

    def channel(self, c: int) -> np.ndarray:
        if self.channels == 1:
            if c != 0:
                raise IndexError(c)
            return self.data
        return self.data[..., c]


@dataclass(frozen=True, eq=False)
class RasterImage(_GridData):
    """2D image with 1 or 3 channels; ``spacing`` is ``(spacing_y, spacing_x)``."""

    data: np.ndarray
    spacing: tuple[float, float] = (1.0, 1.0)
    spatial_ndim = 2

    def __post_init__(self):
        data = _frozen(self.data, np.float64)
        if data.ndim not in (2, 3) or (data.ndim == 3 and data.shape[2] not in (1, 3)):
            raise ValueError(f"RasterImage needs (H, W) or (H, W, 1|3) samples, got {data.shape}")
        if data.ndim == 3 and data.shape[2] == 1:
            data = _frozen(data[..., 0])
        if not np.all(np.isfinite(data)):
            raise ValueError("RasterImage samples must be finite")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", Geometry(data.shape[:2], self.spacing).spacing)

    @property
    def origin(self) -> tuple[float, float]:
        return (0.0, 0.0)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def spacing_y(self) -> float:
        return self.spacing[0]

    @property
    def spacing_x(self) -> float:
        return self.spacing[1]

    def replace(self, data=None, spacing=None) -> "RasterImage":
        return RasterImage(self.data if data is None else data, self.spacing if spacing is None else spacing)


@dataclass(frozen=True, eq=False)
class VoxelVolume(_GridData):
    """3D scalar or multi-channel grid."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    orientation: str = "axial"
    spatial_ndim = 3

    def __post_init__(self):
        data = _frozen(self.data, np.float64)
        if data.ndim not in (3, 4):
            raise ValueError(f"VoxelVolume needs 3 spatial axes, got shape {data.shape}")
        if data.ndim == 4 and data.shape[3] == 1:
            data = _frozen(data[..., 0])
        if not np.all(np.isfinite(data)):
            raise ValueError("VoxelVolume samples must be finite")
        if self.orientation not in ORIENTATIONS:
            raise ValueError(f"orientation must be one of {ORIENTATIONS}")
        geom = Geometry(data.shape[:3], self.spacing, self.origin)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", geom.spacing)
        object.__setattr__(self, "origin", geom.origin)

    def replace(self, data=None, spacing=None, origin=None) -> "VoxelVolume":
        return VoxelVolume(
            self.data if data is None else data,
            self.spacing if spacing is None else spacing,
            self.origin if origin is None else origin,
            self.orientation,
        )

    @classmethod
    def from_geometry(cls, data, geometry: Geometry, orientation="axial") -> "VoxelVolume":
        return cls(data, geometry.spacing, geometry.origin, orientation)


@dataclass(frozen=True, eq=False)
class BinaryMask(_GridData):
    """Boolean grid (2D or 3D) sharing geometry with its parent image."""

    data: np.ndarray
    spacing: Sequence[float] = field(default=())
    origin: Sequence[float] = field(default=())

    def __post_init__(self):
        data = _frozen(self.data, bool)
        if data.ndim not in (2, 3):
            raise ValueError("BinaryMask must be 2D or 3D")
        geom = Geometry(data.shape, tuple(self.spacing) or (1.0,) * data.ndim, tuple(self.origin))
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", geom.spacing)
        object.__setattr__(self, "origin", geom.origin)

    @property
    def spatial_ndim(self) -> int:  # type: ignore[override]
        return self.data.ndim

    @property
    def is_empty(self) -> bool:
        return not bool(self.data.any())

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.data))

    @classmethod
    def like(cls, parent, data) -> "BinaryMask":
        """Mask on the same grid as ``parent`` (image, volume or mask)."""
        data = np.asarray(data, dtype=bool)
        if data.shape != tuple(parent.shape):
            raise ValueError(f"mask shape {data.shape} differs from parent {tuple(parent.shape)}")
        return cls(data, parent.spacing, parent.origin)


def as_array(x) -> np.ndarray:
    """Sample array of a container, or the array itself."""
    return x.data if hasattr(x, "data") else np.asarray(x)


def like(parent, data):
    """Container of the same kind and geometry as ``parent`` holding ``data``."""
    if isinstance(parent, RasterImage):
        return RasterImage(data, parent.spacing)
    if isinstance(parent, VoxelVolume):
        return VoxelVolume(data, parent.spacing, parent.origin, parent.orientation)
    if isinstance(parent, BinaryMask):
        return BinaryMask(data, parent.spacing, parent.origin)
    raise TypeError(f"unsupported container {type(parent).__name__}")


def from_geometry(data, geometry: Geometry, orientation="axial"):
    """RasterImage for 2D geometries, VoxelVolume for 3D ones."""
    if geometry.ndim == 2:
        if any(o != 0 for o in geometry.origin):
            raise ValueError("RasterImage geometry must have a zero origin")
        return RasterImage(data, geometry.spacing)
    return VoxelVolume(data, geometry.spacing, geometry.origin, orientation)
