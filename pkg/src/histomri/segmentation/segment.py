"""Tissue masks for blockface photos, stained slides and the reference volume."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from skimage.filters import threshold_otsu

from ..core.containers import BinaryMask, RasterImage, VoxelVolume
from ..errors import DegenerateInput, EmptyForeground, NoTissueFound
from .color import rgb_to_yiq
from .contours import ChanVeseParams, refine_chan_vese
from .gmm import GmmModel, classify_samples, fit_gmm_em, select_tissue_component
from .morphology import closing, fill_holes, largest_component, morphological_cleanup

logger = logging.getLogger(__name__)

MIN_TISSUE_FRACTION = 1e-3


@dataclass
class SegmentationOptions:
    """Knobs shared by blockface and histology segmentation.

    ``rounds`` repeats the classification: every round after the first
    re-fits the mixture starting from the previous round's cleaned mask.
    ``labels`` (0 = unlabeled, 1 = background, 2 = tissue, same shape as the
    image) replaces the random start of the first round.
    """

    rounds: int = 2
    seed: int = 0
    max_iter: int = 200
    tol: float = 1e-6
    n_init: int = 4
    max_samples: int = 100_000
    keep_largest: bool = True
    fill_holes: bool = True
    chan_vese: bool = False
    chan_vese_params: ChanVeseParams = field(default_factory=ChanVeseParams)
    labels: np.ndarray | None = None

    @classmethod
    def from_dict(cls, d: dict | None) -> "SegmentationOptions":
        d = dict(d or {})
        cv = d.pop("chan_vese_params", None)
        opts = cls(**d)
        if cv is not None:
            opts.chan_vese_params = ChanVeseParams(**cv)
        return opts


@dataclass
class SegmentationResult:
    mask: BinaryMask
    gmm: GmmModel
    tissue_component: int


def _segment_color(image: RasterImage, modality: str, options: SegmentationOptions) -> SegmentationResult:
    yiq = rgb_to_yiq(image)
    x = yiq.iq()
    labels = None if options.labels is None else np.asarray(options.labels).ravel()
    mask = None
    gmm = None
    tissue = 0
    for r in range(max(1, options.rounds)):
        try:
            if r == 0 and labels is None:
                gmm = fit_gmm_em(x, "random_partition", max_iter=options.max_iter, tol=options.tol,
                                 seed=options.seed, n_init=options.n_init, max_samples=options.max_samples)
                tissue = select_tissue_component(gmm, modality)
            else:
                init = labels if r == 0 else np.where(mask.data.ravel(), 2, 1)
                gmm = fit_gmm_em(x, "user_labels", labels=init, max_iter=options.max_iter, tol=options.tol,
                                 seed=options.seed + r, max_samples=options.max_samples)
                tissue = 1
        except DegenerateInput as exc:
            raise NoTissueFound(f"{modality} image has no colour variation") from exc
        raw = classify_samples(x, gmm, tissue).reshape(yiq.shape)
        mask = morphological_cleanup(BinaryMask(raw, image.spacing), options.keep_largest, options.fill_holes)
        if mask.count < 4 or mask.data.size - mask.count < 4:
            break
        logger.debug("%s round %d: %d tissue pixels", modality, r, mask.count)
    if options.chan_vese and not mask.is_empty:
        mask = refine_chan_vese(yiq.luminance(), mask, options.chan_vese_params)
        mask = morphological_cleanup(mask, options.keep_largest, options.fill_holes)
    if mask.count < MIN_TISSUE_FRACTION * mask.data.size:
        raise NoTissueFound(f"{modality} tissue covers {mask.count} of {mask.data.size} pixels")
    if mask.data.size - mask.count < MIN_TISSUE_FRACTION * mask.data.size:
        raise NoTissueFound(f"{modality} classification left no background")
    return SegmentationResult(mask, gmm, tissue)


def segment_blockface(image: RasterImage, options: SegmentationOptions | None = None,
                      return_details: bool = False):
    """Tissue mask of a blockface photo (chromatic tissue on cluttered background)."""
    res = _segment_color(image, "blockface", options or SegmentationOptions())
    return res if return_details else res.mask


def segment_histology(image: RasterImage, options: SegmentationOptions | None = None,
                      return_details: bool = False):
    """Tissue mask of a stained slide photo (stained tissue on a clear background)."""
    res = _segment_color(image, "histology", options or SegmentationOptions())
    return res if return_details else res.mask


def extract_brain_3d(volume: VoxelVolume, closing_radius_mm: float = 3.0) -> BinaryMask:
    """Foreground of a scalar volume.

    Otsu threshold, largest 3D component (drops the detached bright shell),
    closing with a ball of ``closing_radius_mm`` and hole filling.
    """
    data = np.asarray(volume.data if volume.channels == 1 else volume.data[..., 0], float)
    if not np.any(data != data.flat[0]):
        raise EmptyForeground("volume is constant")
    thr = threshold_otsu(data)
    fg = data > thr
    if not fg.any():
        raise EmptyForeground("nothing above the Otsu threshold")
    fg = largest_component(fg)
    if closing_radius_mm > 0:
        fg = closing(fg, closing_radius_mm, volume.spacing)
    fg = fill_holes(fg)
    return BinaryMask(fg, volume.spacing, volume.origin)
