"""Spatial transforms, transform chains and resampling through them.

Transforms follow the pull convention: a transform maps points of the output
(fixed) space to the input (moving) space where samples are read. A chain
``[T0, T1, ...]`` maps an output point ``x`` to ``... T1(T0(x))``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..core.containers import BinaryMask, Geometry, from_geometry
from ..core.interpolation import _check_method, sample_index, spline_coefficients
from ..core.io import read_nvol, write_nvol
from ..errors import GeometryMismatch


@dataclass(frozen=True, eq=False)
class AffineTransform:
    """``x -> A (x - c) + c + t`` in mm."""

    matrix: np.ndarray
    translation: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        a = np.array(self.matrix, dtype=float)
        d = a.shape[0]
        if a.shape != (d, d) or d not in (2, 3):
            raise ValueError(f"matrix must be 2x2 or 3x3, got {a.shape}")
        t = np.array(self.translation, dtype=float).reshape(d)
        c = np.array(self.center, dtype=float).reshape(d)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(t)) and np.all(np.isfinite(c))):
            raise ValueError("affine parameters must be finite")
        if np.linalg.det(a) <= 0:
            raise ValueError("affine matrix must preserve orientation (det > 0)")
        for arr in (a, t, c):
            arr.flags.writeable = False
        object.__setattr__(self, "matrix", a)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "center", c)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def identity(cls, dim: int, center=None) -> "AffineTransform":
        return cls(np.eye(dim), np.zeros(dim), np.zeros(dim) if center is None else center)

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return (p - self.center) @ self.matrix.T + self.center + self.translation

    def inverse(self) -> "AffineTransform":
        ainv = np.linalg.inv(self.matrix)
        return AffineTransform(ainv, -ainv @ self.translation, self.center)

    def then(self, other: "AffineTransform") -> "AffineTransform":
        """``x -> other(self(x))``, expressed about this transform's centre."""
        a = other.matrix @ self.matrix
        t = other.matrix @ (self.center + self.translation - other.center) + other.center + other.translation
        return AffineTransform(a, t - self.center, self.center)

    def with_center(self, center) -> "AffineTransform":
        """Same map expressed about a different centre."""
        c = np.asarray(center, float)
        t = self.apply(c) - c
        return AffineTransform(self.matrix, t, c)

    def to_dict(self) -> dict:
        return {
            "type": "affine",
            "dim": self.dim,
            "matrix": self.matrix.tolist(),
            "translation": self.translation.tolist(),
            "center": self.center.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AffineTransform":
        return cls(np.asarray(d["matrix"]), np.asarray(d["translation"]), np.asarray(d["center"]))

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path

    @classmethod
    def load(cls, path) -> "AffineTransform":
        return cls.from_dict(json.loads(Path(path).read_text()))


def rotation_matrix(angles) -> np.ndarray:
    """2D: one angle (rad). 3D: Euler angles ``(ax, ay, az)``, ``R = Rz @ Ry @ Rx``."""
    angles = np.atleast_1d(np.asarray(angles, float))
    if angles.size == 1:
        c, s = np.cos(angles[0]), np.sin(angles[0])
        return np.array([[c, -s], [s, c]])
    ax, ay, az = angles
    rx = np.array([[1, 0, 0], [0, np.cos(ax), -np.sin(ax)], [0, np.sin(ax), np.cos(ax)]])
    ry = np.array([[np.cos(ay), 0, np.sin(ay)], [0, 1, 0], [-np.sin(ay), 0, np.cos(ay)]])
    rz = np.array([[np.cos(az), -np.sin(az), 0], [np.sin(az), np.cos(az), 0], [0, 0, 1]])
    return rz @ ry @ rx


def euler_angles(r: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rotation_matrix` for 3x3 rotations (|ay| < 90 deg)."""
    ay = np.arcsin(np.clip(-r[2, 0], -1.0, 1.0))
    ax = np.arctan2(r[2, 1], r[2, 2])
    az = np.arctan2(r[1, 0], r[0, 0])
    return np.array([ax, ay, az])


def rigid_transform(angles, translation, center) -> AffineTransform:
    return AffineTransform(rotation_matrix(angles), translation, center)


def _sample_linear_clamped(data: np.ndarray, index: np.ndarray) -> np.ndarray:
    return sample_index(data, index, "linear")


@dataclass(frozen=True, eq=False)
class DeformationField:
    """Dense displacement ``u`` (mm) on a grid: ``phi(x) = x + u(x)``.

    Between nodes the displacement is interpolated linearly; beyond the grid
    it is held at the border value. ``inverse`` optionally holds the field of
    ``phi^-1`` on the same grid.
    """

    displacement: np.ndarray
    geometry: Geometry
    inverse: "DeformationField | None" = field(default=None, repr=False)
    velocity: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        u = np.array(self.displacement, dtype=float)
        if u.shape != tuple(self.geometry.shape) + (self.geometry.ndim,):
            raise ValueError(f"displacement shape {u.shape} does not match geometry {self.geometry.shape}")
        if not np.all(np.isfinite(u)):
            raise ValueError("displacement must be finite")
        u.flags.writeable = False
        object.__setattr__(self, "displacement", u)

    @property
    def dim(self) -> int:
        return self.geometry.ndim

    @classmethod
    def zeros(cls, geometry: Geometry) -> "DeformationField":
        return cls(np.zeros(tuple(geometry.shape) + (geometry.ndim,)), geometry)

    def displacement_at(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        idx = self.geometry.to_index(p)
        return np.stack([_sample_linear_clamped(self.displacement[..., a], idx) for a in range(self.dim)], axis=-1)

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p + self.displacement_at(p)

    def inverted(self) -> "DeformationField":
        if self.inverse is None:
            raise ValueError("field carries no inverse")
        return DeformationField(self.inverse.displacement, self.geometry, self, None if self.velocity is None
                                else -self.velocity)

    def save(self, path, role: str = "forward") -> Path:
        """Write ``<path>`` (and ``<stem>_inverse.nvol`` when present) plus a JSON sidecar."""
        path = Path(path)
        g = self.geometry
        write_nvol(path, self.displacement, g.spacing, g.origin, extra={"role": role})
        side = {"forward": path.name, "dim": self.dim, "geometry": g.to_dict()}
        if self.inverse is not None:
            inv_path = path.with_name(path.stem + "_inverse.nvol")
            write_nvol(inv_path, self.inverse.displacement, g.spacing, g.origin, extra={"role": "inverse"})
            side["inverse"] = inv_path.name
        path.with_suffix(".json").write_text(json.dumps(side, indent=2))
        return path

    @classmethod
    def load(cls, path) -> "DeformationField":
        path = Path(path)
        data, meta = read_nvol(path)
        geom = Geometry(meta["dims"], meta["spacing"], meta["origin"])
        inverse = None
        side = path.with_suffix(".json")
        if side.is_file():
            info = json.loads(side.read_text())
            if "inverse" in info:
                inv, _ = read_nvol(path.with_name(info["inverse"]))
                inverse = cls(inv.reshape(data.shape), geom)
        return cls(data.reshape(tuple(geom.shape) + (geom.ndim,)), geom, inverse)


Transform = "AffineTransform | DeformationField"


def as_chain(transform) -> list:
    if transform is None:
        return []
    if isinstance(transform, (list, tuple)):
        return list(transform)
    return [transform]


def map_points(chain, points) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    for t in as_chain(chain):
        p = t.apply(p)
    return p


def _check_dims(chain, ndim: int):
    for t in as_chain(chain):
        if t.dim != ndim:
            raise GeometryMismatch(f"{type(t).__name__} is {t.dim}D but the grid is {ndim}D")


def apply_transform(grid, transform, target_geometry: Geometry | None = None, method: str = "linear",
                    background: float = 0.0, slab: int = 16):
    """Resample ``grid`` through a transform chain in one interpolation pass.

    Target points are pushed through every transform of the chain (fields
    are sampled, not resampled) and the source is interpolated once.
    """
    _check_method(method)
    src = grid.geometry
    target = target_geometry or src
    if target.ndim != src.ndim:
        raise GeometryMismatch(f"target grid is {target.ndim}D, source is {src.ndim}D")
    chain = as_chain(transform)
    _check_dims(chain, src.ndim)
    channels = grid.channels
    coeffs = [spline_coefficients(grid.channel(c)) if method == "cubic_spline" else None for c in range(channels)]
    out = np.empty(tuple(target.shape) + ((channels,) if channels > 1 else ()), dtype=np.float64)
    axes = [o + (np.arange(n) + 0.5) * s for n, s, o in zip(target.shape, target.spacing, target.origin)]
    step = slab if target.ndim == 3 else target.shape[0]
    for start in range(0, target.shape[0], step):
        stop = min(start + step, target.shape[0])
        pts = np.stack(np.meshgrid(axes[0][start:stop], *axes[1:], indexing="ij"), axis=-1)
        pts = map_points(chain, pts)
        inside = src.in_bounds(pts)
        index = src.to_index(pts)
        for c in range(channels):
            vals = np.where(inside, sample_index(grid.channel(c), index, method, coeffs[c]), background)
            if channels > 1:
                out[start:stop, ..., c] = vals
            else:
                out[start:stop] = vals
    orientation = getattr(grid, "orientation", "axial")
    if hasattr(grid, "data") and grid.data.dtype == bool:
        return BinaryMask(out > 0.5, target.spacing, target.origin)
    return from_geometry(out, target, orientation)


def chain_to_field(chain, geometry: Geometry) -> DeformationField:
    """Sample a chain's total displacement on ``geometry``."""
    pts = geometry.points()
    return DeformationField(map_points(chain, pts) - pts, geometry)


def jacobian_determinant(field: DeformationField):
    """``det(I + du/dx)`` by central differences (one-sided at borders)."""
    u = field.displacement
    g = field.geometry
    d = g.ndim
    jac = [[None] * d for _ in range(d)]
    for i in range(d):
        for j in range(d):
            deriv = np.gradient(u[..., i], g.spacing[j], axis=j) if g.shape[j] > 1 else np.zeros(g.shape)
            jac[i][j] = deriv + (1.0 if i == j else 0.0)
    if d == 2:
        det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0]
        return from_geometry(det, Geometry(g.shape, g.spacing))
    det = (
        jac[0][0] * (jac[1][1] * jac[2][2] - jac[1][2] * jac[2][1])
        - jac[0][1] * (jac[1][0] * jac[2][2] - jac[1][2] * jac[2][0])
        + jac[0][2] * (jac[1][0] * jac[2][1] - jac[1][1] * jac[2][0])
    )
    return from_geometry(det, g)


def interior(shape: Sequence[int]) -> tuple:
    """Slices selecting all voxels at least one voxel away from the border."""
    return tuple(slice(1, n - 1) if n > 2 else slice(None) for n in shape)


def save_chain(chain, directory, stem: str) -> list[str]:
    """Persist a chain as ``<stem>_<k>.json`` / ``.nvol`` files and an index JSON."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for k, t in enumerate(as_chain(chain)):
        if isinstance(t, AffineTransform):
            name = f"{stem}_{k}.json"
            t.save(directory / name)
        else:
            name = f"{stem}_{k}.nvol"
            t.save(directory / name)
        names.append(name)
    (directory / f"{stem}.chain.json").write_text(json.dumps({"chain": names}, indent=2))
    return names


def load_chain(directory, stem: str) -> list:
    directory = Path(directory)
    index = directory / f"{stem}.chain.json"
    if not index.is_file():
        raise FileNotFoundError(index)
    out = []
    for name in json.loads(index.read_text())["chain"]:
        p = directory / name
        out.append(AffineTransform.load(p) if p.suffix == ".json" else DeformationField.load(p))
    return out
