"""Dirichlet-Laplacian spectra of binary shapes and the normalised weighted spectral distance.

The operator is the negative 7-point (5-point in 2D) Laplacian on the
foreground voxels. Its Dirichlet condition sits on the voxel faces that
separate foreground from background: the missing neighbour is the mirror
image ``-u`` of the boundary voxel, making the shape's physical extent (not
one voxel more) the domain of the discrete problem.
"""

from __future__ import annotations

import warnings

import numpy as np
import pyamg
import scipy.sparse as sp
from scipy.sparse.linalg import lobpcg

from ..errors import MaskTooSmall, SolverFailure

EIG_TOL = 1e-8
MIN_INTERIOR = 100
DENSE_LIMIT = 2000
BLOCK_EXTRA = 10
MAX_ITER = 400


class SpectrumDescriptor:
    """First ``K`` eigenvalues (ascending) and their normalisation by ``lambda_1``."""

    def __init__(self, eigenvalues: np.ndarray):
        ev = np.asarray(eigenvalues, float)
        if ev.size == 0 or ev[0] <= 0:
            raise SolverFailure("non-positive first eigenvalue")
        self.eigenvalues = ev
        self.normalized = ev / ev[0]

    @property
    def k(self) -> int:
        return self.eigenvalues.size

    def to_dict(self) -> dict:
        return {"eigenvalues": self.eigenvalues.tolist()}


def _mask_array(mask) -> tuple[np.ndarray, tuple]:
    data = np.asarray(mask.data if hasattr(mask, "data") else mask, bool)
    spacing = tuple(getattr(mask, "spacing", ()) or (1.0,) * data.ndim)
    return data, spacing


def interior_count(data: np.ndarray) -> int:
    inner = data.copy()
    for axis in range(data.ndim):
        fwd = np.zeros_like(data)
        bwd = np.zeros_like(data)
        src = [slice(None)] * data.ndim
        dst = [slice(None)] * data.ndim
        src[axis], dst[axis] = slice(1, None), slice(None, -1)
        fwd[tuple(dst)] = data[tuple(src)]
        bwd[tuple(src)] = data[tuple(dst)]
        inner &= fwd & bwd
    return int(inner.sum())


def laplacian_matrix(data: np.ndarray, spacing) -> tuple[sp.csr_matrix, float]:
    """``(L', s0)`` with the Laplacian ``L = L' / s0**2`` on foreground voxels.

    Factoring out ``s0 = spacing[0]`` makes ``L'`` identical under a uniform
    rescaling of the spacing.
    """
    data = np.asarray(data, bool)
    n = int(data.sum())
    index = -np.ones(data.shape, dtype=np.int64)
    index[data] = np.arange(n)
    s0 = float(spacing[0])
    diag = np.zeros(n)
    rows, cols, vals = [], [], []
    for axis, s in enumerate(spacing):
        w = (s0 / float(s)) ** 2
        for shift in (1, -1):
            nb = np.full(data.shape, -1, dtype=np.int64)
            src = [slice(None)] * data.ndim
            dst = [slice(None)] * data.ndim
            if shift == 1:
                src[axis], dst[axis] = slice(1, None), slice(None, -1)
            else:
                src[axis], dst[axis] = slice(None, -1), slice(1, None)
            nb[tuple(dst)] = index[tuple(src)]
            here = index[data]
            there = nb[data]
            inside = there >= 0
            rows.append(here[inside])
            cols.append(there[inside])
            vals.append(np.full(int(inside.sum()), -w))
            # neighbour inside: +w on the diagonal; across a boundary face the
            # mirrored ghost value -u adds another w
            diag += np.where(inside, w, 2.0 * w)
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    mat = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return mat, s0


def laplacian_spectrum(mask, k: int = 50, seed: int = 0) -> SpectrumDescriptor:
    """Smallest ``k`` Dirichlet eigenvalues of a mask (units 1/mm^2).

    Raises
    ------
    MaskTooSmall
        Fewer than ``max(100, 2k)`` interior voxels.
    SolverFailure
        The eigensolver does not converge.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    data, spacing = _mask_array(mask)
    need = max(MIN_INTERIOR, 2 * k)
    inner = interior_count(data)
    if inner < need or data.sum() <= k:
        raise MaskTooSmall(f"mask has {inner} interior voxels; {need} needed for k={k}")
    mat, s0 = laplacian_matrix(data, spacing)
    return SpectrumDescriptor(_smallest_eigenvalues(mat, k, seed) / s0**2)


def _smallest_eigenvalues(mat: sp.csr_matrix, k: int, seed: int) -> np.ndarray:
    """Lowest ``k`` eigenvalues of an SPD matrix.

    A block solver is used because symmetric shapes have repeated eigenvalues,
    which single-vector Krylov methods tend to return with too few copies.
    """
    n = mat.shape[0]
    if n <= DENSE_LIMIT:
        return np.linalg.eigvalsh(mat.toarray())[:k]
    block = min(k + BLOCK_EXTRA, n // 5)
    x0 = np.random.default_rng(seed).standard_normal((n, block))
    precond = pyamg.smoothed_aggregation_solver(mat.tocsr()).aspreconditioner()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        w, v = lobpcg(mat, x0, M=precond, largest=False, tol=EIG_TOL, maxiter=MAX_ITER)
    order = np.argsort(w)[:k]
    w, v = w[order], v[:, order]
    resid = np.linalg.norm(mat @ v - v * w, axis=0) / np.maximum(np.abs(w), 1e-300)
    if not np.all(np.isfinite(w)) or np.max(resid) > 1e-4:
        raise SolverFailure(f"eigensolver residual {np.max(resid):.2e} above tolerance")
    return np.sort(w)


def weighted_spectral_distance(a: SpectrumDescriptor, b: SpectrumDescriptor, p: float = 2.0) -> float:
    k = min(a.k, b.k)
    la, lb = a.normalized[:k], b.normalized[:k]
    n = np.arange(1, k + 1, dtype=float)
    w = n ** (-p)
    term = ((la - lb) / (la + lb)) ** 2
    return float(np.sqrt(np.sum(w * term)) / np.sqrt(np.sum(w)))


def nwsd(a, b, k: int = 50, p: float = 2.0, seed: int = 0) -> float:
    """Normalised weighted spectral distance in ``[0, 1]`` (0 for identical spectra)."""
    sa = a if isinstance(a, SpectrumDescriptor) else laplacian_spectrum(a, k, seed)
    sb = b if isinstance(b, SpectrumDescriptor) else laplacian_spectrum(b, k, seed)
    return weighted_spectral_distance(sa, sb, p)
