"""Section stacking, stripe correction, coarse 3D placement and colour replay."""

from .alignment import CoarseAlignParams, coarse_align, principal_axes
from .intensity import IntensityMap, IntensityParams, apply_intensity_map, coefficient_of_variation, intensity_correct
from .replay import reconstruct_color, replay_stack
from .stack import SliceStack, StackManifest, calibrate_scale, load_stack, stack_slices, unstack

__all__ = [
    "CoarseAlignParams", "coarse_align", "principal_axes", "IntensityMap", "IntensityParams", "apply_intensity_map",
    "coefficient_of_variation", "intensity_correct", "reconstruct_color", "replay_stack", "SliceStack",
    "StackManifest", "calibrate_scale", "load_stack", "stack_slices", "unstack",
]
