"""Deterministic synthetic specimen with recorded ground truth."""

from .anatomy import Anatomy, GroundTruth, build_anatomy, generate_anatomy, reference_geometry, slice_rng
from .simulate import (SliceTruth, StackGeometry, bias_field, invert_warp, sample_pose, simulate_blockface,
                       simulate_histology, simulate_mri, stack_geometry)
from .spec import (BACKGROUND, BRAIN, CAUDATE, HIPPOCAMPUS, SKULL, STRUCTURE_LABELS, VENTRICLE, Ellipsoid,
                   PhantomSpec)
from .writer import Phantom, default_pipeline_config, generate_phantom, slice_stack_volume, write_phantom

__all__ = [
    "Anatomy", "GroundTruth", "build_anatomy", "generate_anatomy", "reference_geometry", "slice_rng",
    "SliceTruth", "StackGeometry", "bias_field", "invert_warp", "sample_pose", "simulate_blockface",
    "simulate_histology", "simulate_mri", "stack_geometry",
    "BACKGROUND", "BRAIN", "CAUDATE", "HIPPOCAMPUS", "SKULL", "STRUCTURE_LABELS", "VENTRICLE", "Ellipsoid",
    "PhantomSpec", "Phantom", "default_pipeline_config", "generate_phantom", "slice_stack_volume", "write_phantom",
]
