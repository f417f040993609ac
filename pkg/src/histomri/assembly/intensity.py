"""Inter-slice intensity correction (stripe removal).

Each slice ``i`` gets an affine intensity map ``a_i * I + b_i``. The maps are
chosen so that every slice agrees with its corrected neighbours on their
shared foreground, in a robust (Huber) least-squares sense. The whole stack is
solved at once: the neighbour-matching conditions of all slices form one
banded linear system, which is re-weighted until the Huber weights settle.
Two gauge constraints fix the otherwise free global affine map: the mean gain
is 1 and the foreground mean of the stack is unchanged. A prior pulls each gain
towards 1 in proportion to the slice's own intensity spread. Sections that are
nearly single-level leave gain and offset confounded, and without the prior
interior slices collapse to flat images (gain 0) while the end slices absorb
the gauge; offsets still remove the stripes when gains are held near 1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..core.containers import VoxelVolume
from ..errors import TooFewSlices

logger = logging.getLogger(__name__)


@dataclass
class IntensityMap:
    gains: np.ndarray
    offsets: np.ndarray
    iterations: int = 0
    converged: bool = True

    def to_dict(self) -> dict:
        return {"gains": np.asarray(self.gains).tolist(), "offsets": np.asarray(self.offsets).tolist(),
                "iterations": self.iterations, "converged": self.converged}

    @classmethod
    def from_dict(cls, d: dict) -> "IntensityMap":
        return cls(np.asarray(d["gains"], float), np.asarray(d["offsets"], float), d.get("iterations", 0),
                   d.get("converged", True))


@dataclass
class IntensityParams:
    max_iter: int = 50
    tol: float = 1e-4
    huber_k: float = 1.345
    max_pair_samples: int = 20_000
    ridge: float = 1e-8
    gain_prior: float = 0.3

    def __post_init__(self):
        if self.max_iter < 1 or self.tol <= 0 or self.huber_k <= 0 or self.max_pair_samples < 1:
            raise ValueError("intensity parameters must be positive")
        if self.ridge < 0 or self.gain_prior < 0:
            raise ValueError("ridge and gain_prior must be >= 0")


def slice_means(data: np.ndarray, mask: np.ndarray, axis: int = 2) -> np.ndarray:
    d = np.moveaxis(data, axis, 0).reshape(data.shape[axis], -1)
    m = np.moveaxis(mask, axis, 0).reshape(mask.shape[axis], -1)
    counts = m.sum(axis=1)
    sums = np.where(m, d, 0.0).sum(axis=1)
    return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


def coefficient_of_variation(data: np.ndarray, mask: np.ndarray, axis: int = 2) -> float:
    """Spread of the per-slice foreground means relative to their average."""
    m = slice_means(data, mask, axis)
    m = m[np.isfinite(m)]
    return float(np.std(m) / np.mean(m))


def _pair_samples(x: np.ndarray, mx: np.ndarray, y: np.ndarray, my: np.ndarray, cap: int):
    both = (mx & my).ravel()
    xs, ys = x.ravel()[both], y.ravel()[both]
    if xs.size > cap:
        step = int(np.ceil(xs.size / cap))
        xs, ys = xs[::step], ys[::step]
    return xs, ys


def intensity_correct(volume: VoxelVolume, axis: int = 2, mask=None, params: IntensityParams | None = None):
    """Remove per-slice gain/offset stripes along ``axis``.

    Parameters
    ----------
    volume : VoxelVolume
        Scalar volume; voxels outside ``mask`` are left untouched.
    mask : BinaryMask or ndarray, optional
        Foreground; defaults to the non-zero voxels.

    Returns
    -------
    corrected : VoxelVolume
    intensity_map : IntensityMap

    Raises
    ------
    TooFewSlices
        Fewer than two slices along ``axis``.
    """
    params = params or IntensityParams()
    data = np.asarray(volume.data, float)
    if data.ndim != 3:
        raise ValueError("intensity_correct expects a scalar volume")
    n = data.shape[axis]
    if n < 2:
        raise TooFewSlices(f"need at least 2 slices along axis {axis}, got {n}")
    fg = np.asarray(mask.data if hasattr(mask, "data") else mask, bool) if mask is not None else data != 0
    slices = np.moveaxis(data, axis, 0)
    fgs = np.moveaxis(fg, axis, 0)

    pairs = [_pair_samples(slices[i], fgs[i], slices[i + 1], fgs[i + 1], params.max_pair_samples)
             for i in range(n - 1)]
    counts = fgs.reshape(n, -1).sum(axis=1).astype(float)
    sums = np.where(fgs, slices, 0.0).reshape(n, -1).sum(axis=1)
    total = float(sums.sum())

    m = 2 * n
    c = np.zeros((2, m))
    c[0, 0::2] = 1.0
    c[1, 0::2] = sums
    c[1, 1::2] = counts
    d = np.array([float(n), total])
    scale = max(float(np.mean([np.mean(x**2) for x, _ in pairs if x.size] or [1.0])), 1e-12)
    ridge = params.ridge * scale
    means = sums / np.maximum(counts, 1)
    spread = np.array([float(np.sum((s[f] - mu) ** 2)) for s, f, mu in zip(slices, fgs, means)])
    prior = params.gain_prior * spread

    weights = [np.ones_like(x) for x, _ in pairs]
    theta = np.tile([1.0, 0.0], n)
    converged = False
    it = 0
    for it in range(1, params.max_iter + 1):
        h = np.eye(m) * ridge
        h[0::2, 0::2] += np.diag(prior)
        rhs = np.tile([ridge, 0.0], n)
        rhs[0::2] += prior
        for i, ((x, y), w) in enumerate(zip(pairs, weights)):
            if x.size == 0:
                continue
            g = np.stack([x, np.ones_like(x), -y, -np.ones_like(y)], axis=1)
            blk = (g * w[:, None]).T @ g
            sl = slice(2 * i, 2 * i + 4)
            h[sl, sl] += blk
        kkt = np.block([[h, c.T], [c, np.zeros((2, 2))]])
        sol = np.linalg.solve(kkt, np.concatenate([rhs, d]))
        new = sol[:m]
        change = float(np.max(np.abs(new - theta)))
        theta = new
        resid = [theta[2 * i] * x + theta[2 * i + 1] - theta[2 * i + 2] * y - theta[2 * i + 3]
                 for i, (x, y) in enumerate(pairs)]
        allr = np.concatenate([r for r in resid if r.size] or [np.zeros(1)])
        mad = float(np.median(np.abs(allr - np.median(allr))))
        delta = max(params.huber_k * 1.4826 * mad, 1e-12)
        weights = [np.minimum(1.0, delta / np.maximum(np.abs(r), 1e-300)) for r in resid]
        logger.debug("intensity IRLS %d: max change %.3g", it, change)
        if change < params.tol and it > 1:
            converged = True
            break
    gains, offsets = theta[0::2], theta[1::2]
    if np.any(gains <= 0):
        raise ValueError("intensity correction produced a non-positive gain")
    shape = [1, 1, 1]
    shape[axis] = n
    corrected = np.where(fg, data * gains.reshape(shape) + offsets.reshape(shape), data)
    return volume.replace(data=corrected), IntensityMap(gains, offsets, it, converged)


def apply_intensity_map(volume: VoxelVolume, imap: IntensityMap, axis: int = 2, mask=None) -> VoxelVolume:
    data = np.asarray(volume.data, float)
    fg = np.asarray(mask.data if hasattr(mask, "data") else mask, bool) if mask is not None else data != 0
    shape = [1, 1, 1]
    shape[axis] = data.shape[axis]
    out = np.where(fg, data * np.reshape(imap.gains, shape) + np.reshape(imap.offsets, shape), data)
    return volume.replace(data=out)
