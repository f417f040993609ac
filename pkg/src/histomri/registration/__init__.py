"""Similarity metrics, affine and diffeomorphic registration, transform algebra."""

from .affine import AffineResult, RegistrationParams, centroid_init, register_affine
from .diffeo import exp_velocity, register_diffeo
from .metrics import entropy_image, histogram_entropy, mattes_mi
from .transforms import (
    AffineTransform,
    DeformationField,
    apply_transform,
    as_chain,
    chain_to_field,
    euler_angles,
    jacobian_determinant,
    load_chain,
    map_points,
    rigid_transform,
    rotation_matrix,
    save_chain,
)

__all__ = [
    "AffineResult", "RegistrationParams", "centroid_init", "register_affine", "exp_velocity", "register_diffeo",
    "entropy_image", "histogram_entropy", "mattes_mi", "AffineTransform", "DeformationField", "apply_transform",
    "as_chain", "chain_to_field", "euler_angles", "jacobian_determinant", "load_chain", "map_points",
    "rigid_transform", "rotation_matrix", "save_chain",
]
