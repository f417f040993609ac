"""Overlap, deformation statistics and observer agreement."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..errors import GeometryMismatch, UnpairedLabel
from ..registration.transforms import DeformationField, interior, jacobian_determinant

ZERO_JACOBIAN = 1e-6


def _mask_data(m) -> np.ndarray:
    return np.asarray(m.data if hasattr(m, "data") else m, bool)


def dice(a, b) -> float:
    """``2|a & b| / (|a| + |b|)``; two empty masks score 1."""
    da, db = _mask_data(a), _mask_data(b)
    if da.shape != db.shape:
        raise GeometryMismatch(f"mask shapes differ: {da.shape} vs {db.shape}")
    sa, sb = getattr(a, "spacing", None), getattr(b, "spacing", None)
    if sa is not None and sb is not None and not np.allclose(sa, sb):
        raise GeometryMismatch("mask spacings differ")
    total = int(da.sum()) + int(db.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(da & db)) / total


@dataclass
class JacobianReport:
    min: float
    max: float
    negative_count: int
    zero_count: int
    histogram: dict

    def to_dict(self) -> dict:
        return {"min": self.min, "max": self.max, "negative_count": self.negative_count,
                "zero_count": self.zero_count, "histogram": self.histogram}


def jacobian_report(field: DeformationField, bins: int = 20) -> JacobianReport:
    """Jacobian-determinant statistics over the interior voxels of ``field``."""
    det = jacobian_determinant(field).data[interior(field.geometry.shape)].ravel()
    if det.size == 0:
        det = jacobian_determinant(field).data.ravel()
    lo, hi = float(det.min()), float(det.max())
    edges = np.linspace(lo, hi, bins + 1) if hi > lo else np.array([lo - 0.5, lo + 0.5])
    counts, edges = np.histogram(det, bins=edges)
    return JacobianReport(lo, hi, int(np.count_nonzero(det < 0)), int(np.count_nonzero(np.abs(det) < ZERO_JACOBIAN)),
                          {"edges": edges.tolist(), "counts": counts.tolist()})


def _is_nested(obs: Mapping) -> bool:
    return bool(obs) and all(isinstance(v, Mapping) for v in obs.values())


def inter_observer_dice(masks_obs1: Mapping, masks_obs2: Mapping, labels=None) -> dict:
    """DSC between two observers, per modality and label.

    ``masks_obs*`` map label -> mask, or modality -> (label -> mask). Returns
    ``{modality: {label: dsc}}`` (modality ``"default"`` for flat input).

    Raises
    ------
    UnpairedLabel
        A requested label lacks a mask from one of the observers.
    """
    a = masks_obs1 if _is_nested(masks_obs1) else {"default": masks_obs1}
    b = masks_obs2 if _is_nested(masks_obs2) else {"default": masks_obs2}
    table: dict = {}
    for modality in sorted(set(a) | set(b)):
        ma, mb = a.get(modality, {}), b.get(modality, {})
        wanted = list(labels) if labels is not None else sorted(set(ma) | set(mb), key=str)
        row = {}
        for label in wanted:
            if label not in ma or label not in mb:
                raise UnpairedLabel(f"label {label!r} ({modality}) is missing for one observer")
            row[label] = dice(ma[label], mb[label])
        table[modality] = row
    return table


def format_observer_table(table: dict) -> str:
    labels = sorted({lab for row in table.values() for lab in row}, key=str)
    head = "modality".ljust(12) + "".join(str(lab).rjust(12) for lab in labels) + "mean".rjust(12)
    lines = [head]
    for modality, row in table.items():
        vals = [row.get(lab, np.nan) for lab in labels]
        cells = "".join(f"{v:12.4f}" for v in vals)
        lines.append(modality.ljust(12) + cells + f"{np.nanmean(vals):12.4f}")
    return "\n".join(lines)
