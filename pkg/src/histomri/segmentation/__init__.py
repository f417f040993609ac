"""Foreground/background separation by YIQ colour clustering."""

from .color import YIQ_MATRIX, YiqImage, rgb_to_yiq
from .contours import ChanVeseParams, chan_vese_energy, perimeter, refine_chan_vese
from .gmm import GmmModel, classify_samples, fit_gmm_em, select_tissue_component
from .morphology import morphological_cleanup
from .segment import (
    SegmentationOptions,
    SegmentationResult,
    extract_brain_3d,
    segment_blockface,
    segment_histology,
)


def classify_pixels(yiq: YiqImage, gmm: GmmModel, tissue_component: int):
    """Mask of pixels whose tissue posterior exceeds 0.5 (ties go to background)."""
    from ..core.containers import BinaryMask

    flags = classify_samples(yiq.iq(), gmm, tissue_component).reshape(yiq.shape)
    return BinaryMask(flags, yiq.spacing)


__all__ = [
    "YIQ_MATRIX", "YiqImage", "rgb_to_yiq", "ChanVeseParams", "chan_vese_energy", "perimeter",
    "refine_chan_vese", "GmmModel", "classify_samples", "classify_pixels", "fit_gmm_em",
    "select_tissue_component", "morphological_cleanup", "SegmentationOptions", "SegmentationResult",
    "extract_brain_3d", "segment_blockface", "segment_histology",
]
