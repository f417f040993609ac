"""Image/volume containers, I/O, interpolation, smoothing and pyramids."""

from .containers import BinaryMask, Geometry, RasterImage, VoxelVolume, from_geometry, like
from .filters import build_pyramid, gaussian_smooth
from .interpolation import interpolate, resample_to, resample_volume, resampled_geometry
from .io import load_image, load_mask, load_volume, save_image, save_volume

__all__ = [
    "BinaryMask",
    "Geometry",
    "RasterImage",
    "VoxelVolume",
    "build_pyramid",
    "from_geometry",
    "gaussian_smooth",
    "interpolate",
    "like",
    "load_image",
    "load_mask",
    "load_volume",
    "resample_to",
    "resample_volume",
    "resampled_geometry",
    "save_image",
    "save_volume",
]
