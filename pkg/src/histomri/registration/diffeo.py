"""Symmetric diffeomorphic registration with a stationary velocity field.

``phi = exp(v)`` is computed by scaling and squaring. Each iteration derives
a forward update from ``fixed`` vs ``moving o phi`` and a backward update
from ``moving`` vs ``fixed o phi^-1``, averages them in velocity space, and
regularises with a Gaussian on the update (fluid) and on the field
(diffusion).
"""

from __future__ import annotations

import logging
import math
import warnings

import numpy as np
from scipy import ndimage as ndi

from ..core.containers import BinaryMask, Geometry, from_geometry
from ..core.filters import build_pyramid, max_levels, smooth_array
from ..core.interpolation import resample_to
from ..errors import DidNotConverge, NonPositiveJacobian
from .affine import RegistrationParams, prepare_metric_images
from .metrics import box_bins, image_range, parzen_coordinate, parzen_mi
from .transforms import DeformationField, interior, jacobian_determinant

logger = logging.getLogger(__name__)


def _warp_index(array: np.ndarray, disp_vox: np.ndarray, grid: np.ndarray, order: int = 1, cval=None) -> np.ndarray:
    coords = grid + np.moveaxis(disp_vox, -1, 0)
    if cval is None:
        return ndi.map_coordinates(array, coords, order=order, mode="nearest")
    return ndi.map_coordinates(array, coords, order=order, mode="constant", cval=cval)


def index_grid(shape) -> np.ndarray:
    return np.indices(shape, dtype=float)


def squaring_steps(v_vox: np.ndarray, minimum: int) -> int:
    """Enough halvings that the scaled velocity moves less than half a voxel."""
    vmax = float(np.sqrt(np.max(np.sum(v_vox**2, axis=-1)))) if v_vox.size else 0.0
    need = math.ceil(math.log2(vmax / 0.5)) if vmax > 0.5 else 0
    return max(minimum, need)


def exp_velocity(v_vox: np.ndarray, steps: int, grid: np.ndarray | None = None) -> np.ndarray:
    """Displacement (voxels) of ``exp(v)`` by ``steps`` rounds of squaring.

    ``v = 0`` returns an exact zero field.
    """
    if not np.any(v_vox):
        return np.zeros_like(v_vox)
    shape = v_vox.shape[:-1]
    grid = index_grid(shape) if grid is None else grid
    u = v_vox / (2.0**steps)
    for _ in range(steps):
        warped = np.stack([_warp_index(u[..., a], u, grid) for a in range(u.shape[-1])], axis=-1)
        u = u + warped
    return u


def _dense_force(fixed, warped, grad_warped, sample, metric: str, bins: int):
    """Per-voxel force (voxel units) towards better agreement of ``warped`` with ``fixed``."""
    if metric == "mattes_mi":
        f = fixed[sample]
        m = warped[sample]
        f_lo, f_hi = image_range(fixed)
        m_lo, m_hi = image_range(warped)
        fb = box_bins(f, f_lo, f_hi, bins)
        tm, slope = parzen_coordinate(m, m_lo, m_hi, bins)
        _, d_tm, _ = parzen_mi(fb, tm, bins, "box")
        coef = np.zeros(fixed.shape)
        coef[sample] = d_tm * slope
        return coef[..., None] * grad_warped
    diff = fixed - warped
    gnorm = np.sum(grad_warped**2, axis=-1)
    denom = gnorm + diff**2
    with np.errstate(invalid="ignore", divide="ignore"):
        force = np.where(denom[..., None] > 1e-12, diff[..., None] * grad_warped / denom[..., None], 0.0)
    return np.where(sample[..., None], force, 0.0)


def _similarity(fixed, warped, sample, metric: str, bins: int) -> float:
    if metric == "mattes_mi":
        f_lo, f_hi = image_range(fixed)
        m_lo, m_hi = image_range(warped)
        fb = box_bins(fixed[sample], f_lo, f_hi, bins)
        tm, _ = parzen_coordinate(warped[sample], m_lo, m_hi, bins)
        return parzen_mi(fb, tm, bins, "box", need_grad=False)[0]
    return -float(np.mean((fixed[sample] - warped[sample]) ** 2))


def _gradient_vox(a: np.ndarray) -> np.ndarray:
    return np.stack(np.gradient(a), axis=-1)


class _Level:
    def __init__(self, fixed, moving, fmask, mmask, params: RegistrationParams):
        self.f = np.asarray(fixed.data, float)
        self.m = np.asarray(moving.data, float)
        self.spacing = np.asarray(fixed.spacing, float)
        self.grid = index_grid(self.f.shape)
        st = ndi.generate_binary_structure(self.f.ndim, 1)
        union = np.asarray(fmask, bool) | np.asarray(mmask, bool)
        it = params.sample_dilation
        self.sample = ndi.binary_dilation(union, st, iterations=it) if it else union
        if not self.sample.any():
            self.sample = np.ones(self.f.shape, bool)
        self.params = params
        self.metric = "ssd" if params.metric == "ssd_on_entropy" else params.metric

    def evaluate(self, v_vox):
        p = self.params
        n = squaring_steps(v_vox, p.ss_steps)
        u = exp_velocity(v_vox, n, self.grid)
        ui = exp_velocity(-v_vox, n, self.grid)
        mw = _warp_index(self.m, u, self.grid, cval=0.0)
        fw = _warp_index(self.f, ui, self.grid, cval=0.0)
        val = 0.5 * (_similarity(self.f, mw, self.sample, self.metric, p.bins)
                     + _similarity(self.m, fw, self.sample, self.metric, p.bins))
        return val, mw, fw

    def update(self, mw, fw, step_vox: float):
        p = self.params
        fwd = _dense_force(self.f, mw, _gradient_vox(mw), self.sample, self.metric, p.bins)
        bwd = _dense_force(self.m, fw, _gradient_vox(fw), self.sample, self.metric, p.bins)
        upd = 0.5 * (fwd - bwd)
        upd = smooth_array(upd, p.sigma_fluid, self.f.ndim)
        mag = float(np.sqrt(np.max(np.sum(upd**2, axis=-1))))
        if mag == 0:
            return None
        return upd * (step_vox / mag)


def _resample_velocity(v_vox: np.ndarray, src: Geometry, dst: Geometry) -> np.ndarray:
    """Carry a velocity field (voxel units of ``src``) onto ``dst`` (voxel units of ``dst``)."""
    v_mm = v_vox * np.asarray(src.spacing)
    comps = []
    for a in range(src.ndim):
        comps.append(resample_to(from_geometry(v_mm[..., a], src), dst, "linear", clamp=True).data)
    return np.stack(comps, axis=-1) / np.asarray(dst.spacing)


def register_diffeo(fixed, moving, params: RegistrationParams | None = None, fixed_mask=None, moving_mask=None,
                    return_info: bool = False):
    """Diffeomorphic map with ``moving(phi(x)) ~ fixed(x)``.

    ``fixed`` and ``moving`` must share one grid (resample the affinely
    aligned moving image onto the fixed grid first). The returned field
    carries ``phi^-1 = exp(-v)`` as its inverse.

    Raises
    ------
    NonPositiveJacobian
        If the final map folds anywhere in the interior.

    Warns
    -----
    DidNotConverge
        When the finest level exhausts ``diffeo_iters``.
    """
    params = params or RegistrationParams()
    geom = fixed.geometry
    if moving.geometry.shape != geom.shape or not np.allclose(moving.geometry.spacing, geom.spacing):
        raise ValueError("register_diffeo expects both images on the same grid")
    d = geom.ndim
    fimg, mimg = prepare_metric_images(fixed, moving, params)
    fm = np.asarray(fixed_mask.data if fixed_mask is not None else np.asarray(fixed.data) != 0, bool)
    mm = np.asarray(moving_mask.data if moving_mask is not None else np.asarray(moving.data) != 0, bool)
    n_levels = max_levels(geom.shape, params.n_levels(d))
    min_level = min(params.min_level, n_levels - 1)
    pf = build_pyramid(fimg, n_levels)
    pm = build_pyramid(mimg, n_levels)
    pfm = build_pyramid(BinaryMask(fm, geom.spacing, geom.origin), n_levels)
    pmm = build_pyramid(BinaryMask(mm, geom.spacing, geom.origin), n_levels)

    v = None
    vgeom = None
    converged = True
    info = []
    for lvl in range(n_levels - 1, min_level - 1, -1):
        lg = pf[lvl].geometry
        v = np.zeros(tuple(lg.shape) + (d,)) if v is None else _resample_velocity(v, vgeom, lg)
        vgeom = lg
        level = _Level(pf[lvl], pm[lvl], pfm[lvl].data, pmm[lvl].data, params)
        value, mw, fw = level.evaluate(v)
        start_value = value
        best_v, best_value = v, value
        step = params.diffeo_step
        stall = 0
        ok = False
        it = 0
        for it in range(params.diffeo_iters):
            upd = level.update(mw, fw, step)
            if upd is None:
                ok = True
                break
            # diffusion smoothing is part of every step, so a candidate is
            # always taken and the best field seen is kept
            v = smooth_array(v + upd, params.sigma_diffusion, d)
            prev = value
            value, mw, fw = level.evaluate(v)
            if value > best_value * (1 + np.sign(best_value) * params.tol):
                best_v, best_value = v, value
                stall = 0
            else:
                stall += 1
            if value < prev:
                step *= 0.5
            if step < params.min_step or stall >= 5:
                ok = True
                break
        v = best_v
        value = best_value
        info.append({"level": lvl, "start": start_value, "value": value, "iterations": it + 1})
        logger.debug("diffeo level %d: %.5f -> %.5f in %d iterations", lvl, start_value, value, it + 1)
        if lvl == min_level:
            converged = ok

    if vgeom != geom:
        v = _resample_velocity(v, vgeom, geom)
    n = squaring_steps(v, params.ss_steps)
    grid = index_grid(geom.shape)
    u = exp_velocity(v, n, grid) * np.asarray(geom.spacing)
    ui = exp_velocity(-v, n, grid) * np.asarray(geom.spacing)
    vel_mm = v * np.asarray(geom.spacing)
    field = DeformationField(u, geom, DeformationField(ui, geom), vel_mm)
    jac = jacobian_determinant(field).data
    jmin = float(jac[interior(geom.shape)].min()) if jac.size else 1.0
    if jmin <= 0:
        raise NonPositiveJacobian(f"diffeomorphic map folds (min Jacobian {jmin:.3g})")
    if not converged:
        warnings.warn(DidNotConverge(f"diffeomorphic registration hit diffeo_iters={params.diffeo_iters}"),
                      stacklevel=2)
    if return_info:
        return field, {"levels": info, "min_jacobian": jmin, "squaring_steps": n}
    return field
