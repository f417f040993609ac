"""Slice stacks: ordered 2D sections with a physical thickness."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core.containers import ORIENTATIONS, RasterImage, VoxelVolume
from ..core.io import load_image
from ..errors import EmptyStack, InconsistentSliceGeometry, NonPositiveScale


@dataclass(frozen=True, eq=False)
class SliceStack:
    """Co-registered sections in cutting order.

    Slice ``k`` sits at stack depth ``(k + 0.5) * thickness`` mm. ``spacing``
    is the in-plane ``(spacing_y, spacing_x)`` shared by all slices.
    """

    slices: tuple
    thickness: float
    spacing: tuple[float, float] = (1.0, 1.0)
    orientation: str = "axial"
    indices: tuple = field(default=())

    def __post_init__(self):
        slices = tuple(self.slices)
        if self.thickness <= 0:
            raise ValueError("thickness must be > 0")
        if self.orientation not in ORIENTATIONS:
            raise ValueError(f"orientation must be one of {ORIENTATIONS}")
        object.__setattr__(self, "slices", slices)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "indices", tuple(self.indices) or tuple(range(len(slices))))

    def __len__(self) -> int:
        return len(self.slices)

    @property
    def shape(self) -> tuple[int, int]:
        return self.slices[0].data.shape[:2] if self.slices else (0, 0)

    def with_slices(self, slices) -> "SliceStack":
        return SliceStack(tuple(slices), self.thickness, self.spacing, self.orientation, self.indices)

    def with_spacing(self, spacing) -> "SliceStack":
        return SliceStack(tuple(s.replace(spacing=spacing) for s in self.slices), self.thickness, spacing,
                          self.orientation, self.indices)


def _check_geometry(stack: SliceStack):
    if len(stack) == 0:
        raise EmptyStack("stack has no slices")
    ref = stack.slices[0]
    for k, s in enumerate(stack.slices):
        if s.data.shape != ref.data.shape:
            raise InconsistentSliceGeometry(f"slice {k} has shape {s.data.shape}, slice 0 has {ref.data.shape}")


def stack_slices(stack: SliceStack) -> VoxelVolume:
    """Volume with ``vol[:, :, k] == slice_k.T``: axes (x, y, z), dims (w, h, N)."""
    _check_geometry(stack)
    data = np.stack([np.swapaxes(s.data, 0, 1) for s in stack.slices], axis=2)
    sy, sx = stack.spacing
    return VoxelVolume(data, (sx, sy, stack.thickness), (0.0, 0.0, 0.0), stack.orientation)


def unstack(volume: VoxelVolume, k: int) -> np.ndarray:
    """Slice ``k`` of a stacked volume in image (row, column) order."""
    return np.swapaxes(volume.data[:, :, k], 0, 1)


def calibrate_scale(stack: SliceStack, pixels_per_mm: float) -> SliceStack:
    """Assign in-plane spacing ``1 / pixels_per_mm`` to every slice."""
    if not np.isfinite(pixels_per_mm) or pixels_per_mm <= 0:
        raise NonPositiveScale(f"pixels_per_mm must be > 0, got {pixels_per_mm}")
    s = 1.0 / float(pixels_per_mm)
    return stack.with_spacing((s, s))


@dataclass
class StackManifest:
    """On-disk description of a section series."""

    slices: list[str]
    thickness_mm: float
    pixels_per_mm: float | None = None
    orientation: str = "axial"
    indices: list[int] | None = None

    @classmethod
    def load(cls, path) -> "StackManifest":
        path = Path(path)
        d = json.loads(path.read_text())
        root = path.parent
        slices = [str((root / s).resolve()) for s in d["slices"]]
        return cls(slices, float(d["thickness_mm"]), d.get("pixels_per_mm"), d.get("orientation", "axial"),
                   d.get("indices"))

    def save(self, path) -> Path:
        path = Path(path)
        root = path.parent
        rel = [str(Path(s).relative_to(root)) if Path(s).is_absolute() and root in Path(s).parents else s
               for s in self.slices]
        d = {"slices": rel, "thickness_mm": self.thickness_mm, "pixels_per_mm": self.pixels_per_mm,
             "orientation": self.orientation}
        if self.indices is not None:
            d["indices"] = list(self.indices)
        path.write_text(json.dumps(d, indent=2))
        return path


def load_stack(paths, thickness: float, orientation: str = "axial", indices=None) -> SliceStack:
    """Read slice images in order; spacing comes from the first slice."""
    images: list[RasterImage] = [load_image(p) for p in paths]
    if not images:
        raise EmptyStack("no slice files given")
    return SliceStack(tuple(images), thickness, images[0].spacing, orientation, tuple(indices or ()))
