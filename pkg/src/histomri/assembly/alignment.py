"""Coarse rigid (6-DOF) placement of the section stack in reference space."""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..core.containers import BinaryMask, like
from ..errors import DegenerateMask
from ..registration.affine import RegistrationParams, register_affine
from ..registration.metrics import mattes_mi
from ..registration.transforms import AffineTransform, rigid_transform

logger = logging.getLogger(__name__)

AXIS_GAP = 0.02


@dataclass
class CoarseAlignParams:
    """``init="user"`` passes ``angles_deg`` / ``translation_mm`` through unchanged."""

    init: str = "auto"
    angles_deg: tuple = (0.0, 0.0, 0.0)
    translation_mm: tuple = (0.0, 0.0, 0.0)
    refine: bool = True
    registration: RegistrationParams = field(
        default_factory=lambda: RegistrationParams(dof="rigid", levels=3, max_samples=50_000))

    @classmethod
    def from_dict(cls, d: dict | None) -> "CoarseAlignParams":
        d = dict(d or {})
        reg = d.pop("registration", None)
        out = cls(**d)
        if reg is not None:
            base = out.registration.to_dict()
            base.update(reg)
            out.registration = RegistrationParams.from_dict(base)
        return out


def _foreground(grid, mask) -> np.ndarray:
    if mask is not None:
        return np.asarray(mask.data, bool)
    return np.asarray(grid.data if grid.channels == 1 else grid.data[..., 0]) != 0


def principal_axes(mask: np.ndarray, geometry) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Centroid (mm), ascending second-moment eigenvalues and eigenvectors (columns)."""
    pts = geometry.to_mm(np.argwhere(mask).astype(float))
    c = pts.mean(axis=0)
    cov = np.cov((pts - c).T)
    w, v = np.linalg.eigh(cov)
    return c, w, v


def _is_degenerate(w: np.ndarray) -> bool:
    return bool(np.min(np.diff(w)) < AXIS_GAP * w[-1])


def _unit(grid):
    data = np.asarray(grid.data, float)
    peak = float(np.max(np.abs(data)))
    return like(grid, data / peak) if peak > 0 else grid


def coarse_align(moving, fixed, params: CoarseAlignParams | None = None, moving_mask=None, fixed_mask=None):
    """Rigid ``T`` with ``moving(T(x)) ~ fixed(x)``, expressed about the fixed centre.

    Auto mode matches foreground centroids and principal axes. The four
    proper-rotation sign choices of the axes are scored by Mattes MI and the
    best is optionally refined by rigid registration.

    Warns
    -----
    DegenerateMask
        When either inertia tensor has (near-)repeated eigenvalues; the
        orientation is then left at the identity.
    """
    params = params or CoarseAlignParams()
    center = fixed.geometry.center
    if params.init == "user":
        return rigid_transform(np.radians(np.asarray(params.angles_deg, float)),
                               np.asarray(params.translation_mm, float), center)
    if params.init != "auto":
        raise ValueError(f"init must be 'user' or 'auto', got {params.init!r}")
    fm = _foreground(fixed, fixed_mask)
    mm = _foreground(moving, moving_mask)
    cf, wf, vf = principal_axes(fm, fixed.geometry)
    cm, wm, vm = principal_axes(mm, moving.geometry)
    fixed_u, moving_u = _unit(fixed), _unit(moving)
    fmask = BinaryMask(fm, fixed.spacing, fixed.geometry.origin)
    if _is_degenerate(wf) or _is_degenerate(wm):
        warnings.warn(DegenerateMask("principal axes undefined; using centroid alignment only"), stacklevel=2)
        candidates = [np.eye(3)]
    else:
        candidates = []
        for signs in itertools.product((1.0, -1.0), repeat=3):
            r = vm @ np.diag(signs) @ vf.T
            if np.linalg.det(r) > 0:
                candidates.append(r)
    best, best_mi = None, -np.inf
    for r in candidates:
        t = AffineTransform(r, cm - cf, cf).with_center(center)
        mi, _ = mattes_mi(fixed_u, moving_u, t, fixed_mask=fmask)
        logger.debug("principal-axes candidate MI %.4f", mi)
        if mi > best_mi:
            best, best_mi = t, mi
    if params.refine:
        best = register_affine(fixed_u, moving_u, params.registration, init=best,
                               fixed_mask=fmask, moving_mask=BinaryMask(mm, moving.spacing, moving.geometry.origin))
    return best
