"""Symmetric multi-resolution affine registration.

The optimiser works on a half transform ``H`` acting from a midspace about
the fixed-image centre: the fixed image is sampled at ``H^-1(y)`` and the
moving image at ``H(y)``. Both images are therefore interpolated and both
receive a cubic B-spline Parzen window, so swapping the inputs swaps ``H``
for ``H^-1``. The returned fixed-to-moving map is ``H o H``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg
from scipy import ndimage as ndi

from ..core.containers import BinaryMask, like
from ..core.filters import build_pyramid, max_levels
from ..errors import DidNotConverge, InsufficientOverlap
from .metrics import MIN_OVERLAP, entropy_image, image_range, linear_sample_grad, parzen_coordinate, parzen_mi
from .transforms import AffineTransform, rotation_matrix

logger = logging.getLogger(__name__)

DOF_ORDER = ("rigid", "similarity", "affine")
METRICS = ("mattes_mi", "ssd_on_entropy", "ssd")


@dataclass
class RegistrationParams:
    """Settings shared by affine and diffeomorphic registration.

    ``levels=None`` selects 3 pyramid levels for 2D and 4 for 3D inputs.
    ``step`` and ``min_step`` are in voxels of the current pyramid level.
    """

    levels: int | None = None
    metric: str = "mattes_mi"
    bins: int = 32
    max_iter: int = 200
    tol: float = 1e-5
    step: float = 1.0
    min_step: float = 0.01
    dof: str = "affine"
    min_level: int = 0
    max_samples: int | None = 100_000
    seed: int = 0
    entropy_radius: int = 2
    entropy_bins: int = 16
    huber_k: float = 1.345
    sigma_fluid: float = 2.0
    sigma_diffusion: float = 1.0
    ss_steps: int = 6
    diffeo_step: float = 0.5
    diffeo_iters: int = 60
    sample_dilation: int = 2

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        if self.dof not in DOF_ORDER:
            raise ValueError(f"dof must be one of {DOF_ORDER}")
        if self.bins < 8:
            raise ValueError("bins must be >= 8")
        for name in ("max_iter", "tol", "step", "min_step", "sigma_fluid", "ss_steps", "diffeo_step"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.levels is not None and self.levels < 1:
            raise ValueError("levels must be >= 1")

    def n_levels(self, ndim: int) -> int:
        return self.levels if self.levels is not None else (3 if ndim == 2 else 4)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict | None) -> "RegistrationParams":
        return cls(**(d or {}))


# ---------------------------------------------------------------- parametrisation


def _dof_matrix(dof: str, p: np.ndarray, d: int) -> np.ndarray:
    """Incremental matrix for the optimised parameters (identity at p = 0)."""
    if dof == "affine":
        return np.eye(d) + p[: d * d].reshape(d, d)
    nr = 1 if d == 2 else 3
    r = rotation_matrix(p[:nr] if d == 3 else p[0])
    if dof == "similarity":
        r = np.exp(p[nr]) * r
    return r


def _n_linear(dof: str, d: int) -> int:
    if dof == "affine":
        return d * d
    nr = 1 if d == 2 else 3
    return nr + (1 if dof == "similarity" else 0)


@dataclass
class _State:
    b0: np.ndarray
    s0: np.ndarray
    dof: str
    p: np.ndarray = field(default=None)

    def __post_init__(self):
        d = len(self.s0)
        if self.p is None:
            self.p = np.zeros(_n_linear(self.dof, d) + d)

    def half(self, p=None):
        p = self.p if p is None else p
        d = len(self.s0)
        nl = _n_linear(self.dof, d)
        return _dof_matrix(self.dof, p, d) @ self.b0, self.s0 + p[nl:]

    def matrix_jacobian(self, p=None) -> np.ndarray:
        """d B / d p_k for the linear parameters, shape (nl, d, d)."""
        p = self.p if p is None else p
        d = len(self.s0)
        nl = _n_linear(self.dof, d)
        out = np.empty((nl, d, d))
        eps = 1e-6
        for k in range(nl):
            e = np.zeros_like(p)
            e[k] = eps
            out[k] = (_dof_matrix(self.dof, p + e, d) - _dof_matrix(self.dof, p - e, d)) @ self.b0 / (2 * eps)
        return out


# ---------------------------------------------------------------- objective


class _LevelObjective:
    """Metric between the two images on a fixed midspace sample set."""

    def __init__(self, fixed, moving, fmask, mmask, center, params: RegistrationParams, b0, s0, rng):
        self.fixed = np.asarray(fixed.data, float)
        self.moving = np.asarray(moving.data, float)
        self.gf = fixed.geometry
        self.gm = moving.geometry
        self.center = np.asarray(center, float)
        self.params = params
        self.metric = params.metric
        self.f_lo, self.f_hi = image_range(self.fixed)
        self.m_lo, self.m_hi = image_range(self.moving)
        st = ndi.generate_binary_structure(self.fixed.ndim, 1)
        it = params.sample_dilation
        fdil = ndi.binary_dilation(fmask, st, iterations=it) if it else fmask
        mdil = ndi.binary_dilation(mmask, st, iterations=it) if it else mmask
        self.fmask = fmask
        self.mmask = mmask
        y = self.gf.points().reshape(-1, self.gf.ndim)
        z, w = self._map(y, b0, s0)
        keep = _nearest(fdil, self.gf, z) | _nearest(mdil, self.gm, w)
        y = y[keep]
        if params.max_samples is not None and len(y) > params.max_samples:
            pick = np.sort(rng.choice(len(y), params.max_samples, replace=False))
            y = y[pick]
        # off-grid samples: grid-aligned lookups are exact only at the identity, which biases MI
        y = y + (rng.random(y.shape) - 0.5) * np.asarray(self.gf.spacing)
        self.y = y
        self.rel_y = y - self.center
        self.delta = None
        if self.metric != "mattes_mi" and len(y):
            r = self._residual(b0, s0)
            mad = np.median(np.abs(r - np.median(r)))
            self.delta = max(params.huber_k * 1.4826 * mad, 1e-6)

    def _map(self, y, b, s):
        binv = np.linalg.inv(b)
        rel = y - self.center
        w = rel @ b.T + self.center + s
        z = (rel - s) @ binv.T + self.center
        return z, w

    def _residual(self, b, s):
        z, w = self._map(self.y, b, s)
        f, _ = linear_sample_grad(self.fixed, self.gf.to_index(z))
        m, _ = linear_sample_grad(self.moving, self.gm.to_index(w))
        return f - m

    def overlap(self, b, s) -> float:
        z, w = self._map(self.y, b, s)
        both = _nearest(self.fmask, self.gf, z) & _nearest(self.mmask, self.gm, w)
        return np.count_nonzero(both) / max(1, min(self.fmask.sum(), self.mmask.sum()))

    def __call__(self, b, s, need_grad=True):
        """Value and gradients w.r.t. (B, s)."""
        z, w = self._map(self.y, b, s)
        f, gfi = linear_sample_grad(self.fixed, self.gf.to_index(z))
        m, gmi = linear_sample_grad(self.moving, self.gm.to_index(w))
        n = len(f)
        if self.metric == "mattes_mi":
            bins = self.params.bins
            tf, slope_f = parzen_coordinate(f, self.f_lo, self.f_hi, bins)
            tm, slope_m = parzen_coordinate(m, self.m_lo, self.m_hi, bins)
            value, d_tm, d_tf = parzen_mi(tf, tm, bins, "bspline", need_grad)
            if not need_grad:
                return value, None, None
            df = d_tf * slope_f
            dm = d_tm * slope_m
        else:
            r = f - m
            delta = self.delta
            a = np.abs(r)
            rho = np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))
            value = -float(np.mean(rho))
            if not need_grad:
                return value, None, None
            psi = np.clip(r, -delta, delta)
            df = -psi / n
            dm = psi / n
        gz = df[:, None] * gfi / np.asarray(self.gf.spacing)
        gw = dm[:, None] * gmi / np.asarray(self.gm.spacing)
        binv = np.linalg.inv(b)
        q = gz @ binv
        grad_b = gw.T @ self.rel_y - q.T @ (z - self.center)
        grad_s = gw.sum(axis=0) - q.sum(axis=0)
        return value, grad_b, grad_s


def _nearest(mask: np.ndarray, geom, points) -> np.ndarray:
    idx = np.floor(geom.to_index(points) + 0.5).astype(np.intp)
    shape = np.asarray(mask.shape)
    valid = np.all((idx >= 0) & (idx < shape), axis=1)
    idx = np.clip(idx, 0, shape - 1)
    return valid & mask[tuple(idx.T)]


# ---------------------------------------------------------------- driver


def _half_of(transform: AffineTransform, center) -> tuple[np.ndarray, np.ndarray]:
    """``(B, s)`` with ``H o H = transform`` about ``center``."""
    t = transform.with_center(center)
    b = np.real(linalg.sqrtm(t.matrix))
    d = len(center)
    s = np.linalg.solve(b + np.eye(d), t.translation)
    return b, s


def _foreground(grid, mask) -> np.ndarray:
    if mask is not None:
        return np.asarray(mask.data, bool)
    return np.asarray(grid.data) != 0


def centroid_init(fixed, moving, fixed_mask=None, moving_mask=None) -> AffineTransform:
    """Translation aligning the foreground centroids (identity if a mask is empty)."""
    fm = _foreground(fixed, fixed_mask)
    mm = _foreground(moving, moving_mask)
    c = fixed.geometry.center
    if not fm.any() or not mm.any():
        return AffineTransform.identity(fixed.geometry.ndim, c)
    cf = fixed.geometry.to_mm(np.argwhere(fm).mean(axis=0))
    cm = moving.geometry.to_mm(np.argwhere(mm).mean(axis=0))
    return AffineTransform(np.eye(len(c)), cm - cf, c)


def _stages(n_levels: int, min_level: int, dof: str) -> list[tuple[int, str]]:
    dofs = DOF_ORDER[: DOF_ORDER.index(dof) + 1]
    levels = list(range(n_levels - 1, min_level - 1, -1))
    stages = [(lvl, dofs[min(i, len(dofs) - 1)]) for i, lvl in enumerate(levels)]
    for extra in dofs[len(levels):]:
        stages.append((levels[-1], extra))
    return stages


@dataclass
class AffineResult:
    transform: AffineTransform
    value: float
    converged: bool
    trace: list


def prepare_metric_images(fixed, moving, params: RegistrationParams):
    """Entropy images for ``ssd_on_entropy``; the inputs otherwise."""
    if params.metric != "ssd_on_entropy":
        return fixed, moving
    scale = lambda g: like(g, np.asarray(g.data, float))  # noqa: E731
    fe = entropy_image(scale(fixed), params.entropy_radius, params.entropy_bins)
    me = entropy_image(scale(moving), params.entropy_radius, params.entropy_bins)
    return fe, me


def register_affine(
    fixed,
    moving,
    params: RegistrationParams | None = None,
    init: AffineTransform | str | None = "centroid",
    fixed_mask: BinaryMask | None = None,
    moving_mask: BinaryMask | None = None,
    return_result: bool = False,
):
    """Affine map ``T`` with ``moving(T(x)) ~ fixed(x)`` for fixed-space points ``x``.

    Parameters
    ----------
    fixed, moving : RasterImage or VoxelVolume
        Segmented images (background 0).
    params : RegistrationParams
    init : AffineTransform, "centroid" or None
        Starting transform; ``"centroid"`` aligns foreground centroids and
        ``None`` starts from the identity.
    fixed_mask, moving_mask : BinaryMask, optional
        Foreground masks; default to the non-zero samples.

    Warns
    -----
    DidNotConverge
        When the finest level hits ``max_iter``; the best transform found is
        still returned.
    """
    params = params or RegistrationParams()
    d = fixed.geometry.ndim
    if moving.geometry.ndim != d:
        raise ValueError("fixed and moving must have the same dimension")
    center = fixed.geometry.center
    if isinstance(init, AffineTransform):
        t0 = init
    elif init == "centroid":
        t0 = centroid_init(fixed, moving, fixed_mask, moving_mask)
    elif init is None:
        t0 = AffineTransform.identity(d, center)
    else:
        raise ValueError(f"unknown init {init!r}")
    b, s = _half_of(t0, center)

    fimg, mimg = prepare_metric_images(fixed, moving, params)
    fm = BinaryMask(_foreground(fixed, fixed_mask), fixed.spacing, fixed.geometry.origin)
    mm = BinaryMask(_foreground(moving, moving_mask), moving.spacing, moving.geometry.origin)
    n_levels = min(max_levels(fixed.shape, params.n_levels(d)), max_levels(moving.shape, params.n_levels(d)))
    if n_levels < params.n_levels(d):
        logger.info("using %d pyramid levels (images too small for %d)", n_levels, params.n_levels(d))
    min_level = min(params.min_level, n_levels - 1)
    pyr = {
        "f": build_pyramid(fimg, n_levels),
        "m": build_pyramid(mimg, n_levels),
        "fm": build_pyramid(fm, n_levels),
        "mm": build_pyramid(mm, n_levels),
    }
    rng = np.random.default_rng(params.seed)
    trace: list = []
    converged = True
    value = np.nan
    stages = _stages(n_levels, min_level, params.dof)
    for si, (lvl, dof) in enumerate(stages):
        obj = _LevelObjective(pyr["f"][lvl], pyr["m"][lvl], pyr["fm"][lvl].data, pyr["mm"][lvl].data,
                              center, params, b, s, rng)
        if len(obj.y) == 0 or obj.overlap(b, s) < MIN_OVERLAP:
            raise InsufficientOverlap("fixed and moving foregrounds barely overlap")
        state = _State(b, s, dof)
        voxel = float(np.min(pyr["f"][lvl].spacing))
        value, ok, iters = _ascend(obj, state, params, voxel)
        b, s = state.half()
        trace.append({"level": lvl, "dof": dof, "value": value, "iterations": iters})
        logger.debug("affine level %d (%s): %s=%.5f after %d iterations", lvl, dof, params.metric, value, iters)
        if si == len(stages) - 1:
            converged = ok
    result = AffineTransform(b @ b, b @ s + s, center)
    if not converged:
        warnings.warn(DidNotConverge(f"affine registration hit max_iter={params.max_iter}"), stacklevel=2)
    if return_result:
        return AffineResult(result, value, converged, trace)
    return result


def _ascend(obj: _LevelObjective, state: _State, params: RegistrationParams, voxel: float):
    """Normalised gradient ascent with backtracking, in mm-scaled parameters."""
    d = len(state.s0)
    nl = _n_linear(state.dof, d)
    radius = float(np.sqrt(np.mean(np.sum(obj.rel_y**2, axis=1)))) if len(obj.y) else 1.0
    scale = np.concatenate([np.full(nl, max(radius, voxel)), np.ones(d)])
    step = params.step * voxel
    min_step = params.min_step * voxel
    b, s = state.half()
    value, gb, gs = obj(b, s)
    flat = 0
    for it in range(params.max_iter):
        jac = state.matrix_jacobian()
        g = np.concatenate([np.tensordot(jac, gb, axes=([1, 2], [0, 1])), gs])
        gq = g / scale
        norm = np.linalg.norm(gq)
        if norm == 0 or not np.isfinite(norm):
            return value, True, it
        direction = gq / norm / scale
        accepted = False
        while step >= min_step:
            cand = state.p + step * direction
            cb, cs = state.half(cand)
            if np.linalg.det(cb) > 0:
                cval, cgb, cgs = obj(cb, cs)
                if cval > value:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            return value, True, it
        gain = (cval - value) / max(abs(value), 1e-12)
        state.p = cand
        value, gb, gs = cval, cgb, cgs
        step *= 1.5
        # a single small gain can come from a short trial step; require a run
        flat = flat + 1 if gain < params.tol else 0
        if flat >= 3:
            return value, True, it + 1
    return value, False, params.max_iter
