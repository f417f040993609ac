"""Reference (MRI) preparation: bias correction, brain extraction, upsampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage as ndi
from skimage.filters import threshold_otsu

from ..core.containers import BinaryMask, VoxelVolume, from_geometry
from ..core.interpolation import resample_to, resample_volume, resampled_geometry
from ..errors import EmptyMask
from ..segmentation import extract_brain_3d
from .bias import BiasField, BiasParams, correct_bias

logger = logging.getLogger(__name__)


@dataclass
class PreprocParams:
    bias: BiasParams = field(default_factory=BiasParams)
    correct_bias: bool = True
    closing_radius_mm: float = 3.0
    spacing_mm: float | tuple | None = 0.33
    method: str = "cubic_spline"

    @classmethod
    def from_dict(cls, d: dict | None) -> "PreprocParams":
        d = dict(d or {})
        bias = d.pop("bias", None)
        resample = d.pop("resample", None)
        out = cls(**d)
        if bias is not None:
            out.bias = BiasParams.from_dict(bias)
        if resample is not None:
            out.spacing_mm = resample.get("spacing_mm", out.spacing_mm)
            out.method = resample.get("method", out.method)
        return out


@dataclass
class PreprocResult:
    volume: VoxelVolume
    mask: BinaryMask
    bias: BiasField | None


def head_mask(volume: VoxelVolume) -> np.ndarray:
    """Everything above the Otsu threshold, with enclosed cavities filled."""
    data = np.asarray(volume.data, float)
    if not np.any(data > 0):
        raise EmptyMask("volume has no positive voxels")
    fg = data > threshold_otsu(data)
    return ndi.binary_fill_holes(fg)


def preprocess_reference(volume: VoxelVolume, params: PreprocParams | None = None, return_details: bool = False):
    """Bias correction, brain extraction, zeroed background, resampling.

    The output is zero outside the (resampled) brain mask and non-negative
    inside it; cubic-spline overshoot at the brain boundary is clipped.
    """
    params = params or PreprocParams()
    if volume.channels != 1:
        raise ValueError("reference volume must be scalar")
    bias = None
    work = volume
    if params.correct_bias:
        work, bias = correct_bias(volume, head_mask(volume), params.bias)
    brain = extract_brain_3d(work, params.closing_radius_mm)
    masked = work.replace(data=np.where(brain.data, work.data, 0.0))
    if params.spacing_mm is None:
        out, out_mask = masked, brain
    else:
        geom = resampled_geometry(masked.geometry, params.spacing_mm)
        if geom == masked.geometry:
            out, out_mask = masked, brain
        else:
            out = resample_volume(masked, params.spacing_mm, params.method)
            soft = resample_to(from_geometry(brain.data.astype(float), brain.geometry), geom, "linear", clamp=True)
            out_mask = BinaryMask(soft.data >= 0.5, geom.spacing, geom.origin)
            out = out.replace(data=np.where(out_mask.data, np.clip(out.data, 0.0, None), 0.0))
    logger.info("reference preprocessed to %s at %s mm", out.shape, out.spacing)
    if return_details:
        return PreprocResult(out, out_mask, bias)
    return out
