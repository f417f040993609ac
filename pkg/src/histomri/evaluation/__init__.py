"""Overlap, spectral shape distance and deformation statistics."""

from .overlap import JacobianReport, dice, format_observer_table, inter_observer_dice, jacobian_report
from .report import EvaluationReport, evaluate_structures
from .spectral import SpectrumDescriptor, laplacian_matrix, laplacian_spectrum, nwsd, weighted_spectral_distance

__all__ = [
    "JacobianReport", "dice", "format_observer_table", "inter_observer_dice", "jacobian_report", "EvaluationReport",
    "evaluate_structures", "SpectrumDescriptor", "laplacian_matrix", "laplacian_spectrum", "nwsd",
    "weighted_spectral_distance",
]
