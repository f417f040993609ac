"""Similarity measures: local entropy images and Parzen-window mutual information."""

from __future__ import annotations

import itertools

import numpy as np
from scipy import ndimage as ndi

from ..core.containers import like
from ..errors import InsufficientOverlap, WindowExceedsImage

MIN_OVERLAP = 0.10


def entropy_image(gray, patch_radius: int = 3, bins: int = 16):
    """Shannon entropy (nats) of the intensity histogram in a sliding window.

    Intensities are binned into ``bins`` equal-width bins spanning the image
    range; the window is the ``(2r+1)^d`` cube around each sample, mirrored at
    the borders. Output values lie in ``[0, ln bins]``.
    """
    if patch_radius < 1:
        raise ValueError("patch_radius must be >= 1")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    data = np.asarray(gray.data, dtype=float)
    size = 2 * patch_radius + 1
    if any(size > n for n in data.shape):
        raise WindowExceedsImage(f"window {size} exceeds image shape {data.shape}")
    lo, hi = float(data.min()), float(data.max())
    if hi <= lo:
        return like(gray, np.zeros_like(data))
    idx = np.clip(((data - lo) / (hi - lo) * bins).astype(int), 0, bins - 1)
    ent = np.zeros_like(data)
    for b in range(bins):
        ind = idx == b
        if not ind.any():
            continue
        p = ndi.uniform_filter(ind.astype(float), size=size, mode="mirror")
        p = np.where(p > 1e-12, p, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            ent -= np.where(p > 0, p * np.log(p), 0.0)
    return like(gray, np.clip(ent, 0.0, np.log(bins)))


# ---------------------------------------------------------------- B-splines


def bspline3(u: np.ndarray) -> np.ndarray:
    a = np.abs(u)
    return np.where(a < 1, (4 - 6 * a**2 + 3 * a**3) / 6, np.where(a < 2, (2 - a) ** 3 / 6, 0.0))


def bspline3_deriv(u: np.ndarray) -> np.ndarray:
    a = np.abs(u)
    s = np.sign(u)
    return s * np.where(a < 1, (-12 * a + 9 * a**2) / 6, np.where(a < 2, -0.5 * (2 - a) ** 2, 0.0))


def parzen_coordinate(values: np.ndarray, lo: float, hi: float, bins: int) -> tuple[np.ndarray, float]:
    """Continuous bin coordinate in ``[1, bins - 2]`` and its slope d t / d value."""
    scale = (bins - 3) / (hi - lo) if hi > lo else 0.0
    return 1.0 + (values - lo) * scale, scale


def box_bins(values: np.ndarray, lo: float, hi: float, bins: int) -> np.ndarray:
    frac = (values - lo) / (hi - lo) if hi > lo else np.zeros_like(values)
    return np.clip(np.floor(frac * bins).astype(int), 0, bins - 1)


def _spline_weights(t: np.ndarray, bins: int):
    """(indices, weights, derivative weights) over the 4-bin support, shape (4, n)."""
    base = np.floor(t).astype(int)
    offs = np.arange(-1, 3)[:, None]
    k = base[None, :] + offs
    u = k - t[None, :]
    w = bspline3(u)
    dw = -bspline3_deriv(u)  # d/dt of beta(k - t)
    valid = (k >= 0) & (k < bins)
    return np.clip(k, 0, bins - 1), np.where(valid, w, 0.0), np.where(valid, dw, 0.0)


def parzen_mi(fixed_coord, moving_coord, bins: int, fixed_kernel: str = "box", need_grad: bool = True):
    """Mutual information of paired samples and its per-sample derivatives.

    Parameters
    ----------
    fixed_coord : ndarray
        Integer bins (``fixed_kernel="box"``) or continuous coordinates
        (``"bspline"``) of the fixed samples.
    moving_coord : ndarray
        Continuous coordinates of the moving samples (cubic B-spline kernel).

    Returns
    -------
    mi : float
    d_moving : ndarray or None
        ``d MI / d moving_coord`` per sample.
    d_fixed : ndarray or None
        ``d MI / d fixed_coord`` per sample (B-spline fixed kernel only).
    """
    n = moving_coord.size
    km, wm, dwm = _spline_weights(moving_coord, bins)
    if fixed_kernel == "box":
        kf = fixed_coord[None, :].astype(int)
        wf = np.ones((1, n))
        dwf = None
    elif fixed_kernel == "bspline":
        kf, wf, dwf = _spline_weights(fixed_coord, bins)
    else:
        raise ValueError(f"unknown kernel {fixed_kernel!r}")
    flat = (kf[:, None, :] * bins + km[None, :, :]).reshape(-1)
    weights = (wf[:, None, :] * wm[None, :, :]).reshape(-1)
    joint = np.bincount(flat, weights=weights, minlength=bins * bins).reshape(bins, bins) / n
    pf = joint.sum(axis=1)
    pm = joint.sum(axis=0)
    nz = joint > 0
    ratio = np.zeros_like(joint)
    ii, jj = np.nonzero(nz)
    ratio[ii, jj] = np.log(joint[ii, jj]) - np.log(pf[ii]) - np.log(pm[jj])
    mi = float(np.sum(joint[nz] * ratio[nz]))
    if not need_grad:
        return mi, None, None
    lut = ratio.reshape(-1)
    lmat = lut[flat].reshape(kf.shape[0], km.shape[0], n)
    d_moving = np.einsum("fn,mn,fmn->n", wf, dwm, lmat) / n
    d_fixed = None
    if dwf is not None:
        d_fixed = np.einsum("fn,mn,fmn->n", dwf, wm, lmat) / n
    return mi, d_moving, d_fixed


def histogram_entropy(values: np.ndarray, bins: int) -> float:
    """Entropy (nats) of equal-width binning, matching the fixed-side box kernel."""
    b = box_bins(values, float(values.min()), float(values.max()), bins)
    p = np.bincount(b, minlength=bins) / b.size
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


# ---------------------------------------------------------------- sampling


def linear_sample_grad(data: np.ndarray, index: np.ndarray):
    """Multilinear interpolation with zero padding, plus gradient w.r.t. index.

    ``index`` has shape ``(n, d)``; returns ``(values (n,), grad (n, d))``.
    """
    d = data.ndim
    i0 = np.floor(index).astype(np.intp)
    f = index - i0
    shape = np.asarray(data.shape)
    val = np.zeros(len(index))
    grad = np.zeros((len(index), d))
    for corner in itertools.product((0, 1), repeat=d):
        c = np.asarray(corner)
        ij = i0 + c
        valid = np.all((ij >= 0) & (ij < shape), axis=1)
        ijc = np.clip(ij, 0, shape - 1)
        v = np.where(valid, data[tuple(ijc.T)], 0.0)
        w1 = np.where(c == 1, f, 1 - f)
        w = np.prod(w1, axis=1)
        val += w * v
        for a in range(d):
            others = np.prod(np.delete(w1, a, axis=1), axis=1) if d > 1 else 1.0
            grad[:, a] += (1.0 if corner[a] else -1.0) * others * v
    return val, grad


def image_range(data: np.ndarray) -> tuple[float, float]:
    """Intensity range used for binning; always includes the zero background."""
    return min(float(data.min()), 0.0), max(float(data.max()), 0.0)


def mattes_mi(fixed, moving, transform, bins: int = 32, fixed_mask=None):
    """Mattes mutual information of ``fixed`` and ``moving o transform``.

    Fixed samples are the fixed-grid nodes (restricted to ``fixed_mask``
    when given) binned with a zero-order kernel; warped moving intensities use
    a cubic B-spline Parzen window. The moving image is interpolated
    (multi)linearly with zero padding.

    Returns
    -------
    value : float
        MI in nats.
    gradient : ndarray
        Derivatives w.r.t. the matrix entries (row-major) then translation.
    """
    geom_f = fixed.geometry
    geom_m = moving.geometry
    pts = geom_f.points().reshape(-1, geom_f.ndim)
    fvals = np.asarray(fixed.data, float).reshape(-1)
    if fixed_mask is not None:
        keep = np.asarray(fixed_mask.data, bool).reshape(-1)
    else:
        keep = np.ones(fvals.shape, bool)
    pts, fvals = pts[keep], fvals[keep]
    mapped = transform.apply(pts)
    mdata = np.asarray(moving.data, float)
    mvals, grad_idx = linear_sample_grad(mdata, geom_m.to_index(mapped))
    overlap = np.count_nonzero(geom_m.in_bounds(mapped) & (np.abs(mvals) > 0)) if np.any(mdata == 0) else \
        np.count_nonzero(geom_m.in_bounds(mapped))
    fg = np.count_nonzero(fvals != 0) if np.any(fvals != 0) else len(fvals)
    if len(fvals) == 0 or overlap < MIN_OVERLAP * fg:
        raise InsufficientOverlap(f"only {overlap} of {fg} fixed foreground samples overlap the moving image")
    f_lo, f_hi = image_range(np.asarray(fixed.data))
    m_lo, m_hi = image_range(mdata)
    fb = box_bins(fvals, f_lo, f_hi, bins)
    tm, slope = parzen_coordinate(mvals, m_lo, m_hi, bins)
    mi, d_tm, _ = parzen_mi(fb, tm, bins, "box")
    grad_mm = grad_idx / np.asarray(geom_m.spacing)
    coef = (d_tm * slope)[:, None] * grad_mm  # dMI/d(mapped point)
    rel = pts - transform.center
    g_matrix = coef.T @ rel  # (d, d): sum coef_i * rel_j
    g_trans = coef.sum(axis=0)
    return mi, np.concatenate([g_matrix.reshape(-1), g_trans])
