"""Simulated acquisitions: reference MRI, blockface photos and stained sections."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage as ndi
from scipy.spatial.transform import Rotation

from ..assembly.stack import SliceStack
from ..core.containers import Geometry, RasterImage, VoxelVolume
from ..registration.transforms import AffineTransform, DeformationField, jacobian_determinant, rotation_matrix
from .anatomy import (STREAM_BLOCKFACE, STREAM_CLUTTER, STREAM_HISTOLOGY, STREAM_MRI, STREAM_POSE, GroundTruth,
                      slice_rng)
from .spec import BRAIN, CAUDATE, HIPPOCAMPUS, SKULL, VENTRICLE, PhantomSpec

LABEL_NAMES = {BRAIN: "brain", SKULL: "skull", VENTRICLE: "ventricle", HIPPOCAMPUS: "hippocampus", CAUDATE: "caudate"}

BLOCKFACE_BACKGROUND = np.array([0.12, 0.12, 0.13])
BLOCKFACE_TISSUE = {
    BRAIN: (0.82, 0.58, 0.52), VENTRICLE: (0.62, 0.40, 0.40), HIPPOCAMPUS: (0.88, 0.66, 0.58),
    CAUDATE: (0.76, 0.50, 0.46),
}
CLUTTER_COLORS = np.array([(0.20, 0.55, 0.25), (0.25, 0.25, 0.60), (0.30, 0.70, 0.70), (0.55, 0.60, 0.65)])
RULER_COLOR = np.array([0.85, 0.85, 0.80])
SLIDE_WHITE = np.array([0.95, 0.95, 0.96])
STAIN_PURPLE = np.array([0.45, 0.20, 0.60])
MAX_WARP_DRAWS = 10


def _label_lut(values: dict, default: float = 0.0) -> np.ndarray:
    lut = np.full(256, default)
    for label, name in LABEL_NAMES.items():
        if name in values:
            lut[label] = values[name]
    return lut


# ---------------------------------------------------------------- MRI


def bias_field(spec: PhantomSpec, labels: VoxelVolume) -> np.ndarray:
    """Smooth multiplicative field: exp of a random quadratic, peak |log| = log(1 + amplitude)."""
    if spec.bias_amplitude == 0:
        return np.ones(labels.shape)
    rng = slice_rng(spec.seed, STREAM_MRI, 0)
    g = labels.geometry
    x, y, z = np.moveaxis((g.points() - g.center) / (g.extent / 2.0), -1, 0)
    terms = [x, y, z, x * x, y * y, z * z, x * y, x * z, y * z]
    coef = rng.standard_normal(len(terms))
    logb = sum(c * t for c, t in zip(coef, terms))
    head = labels.data > 0
    logb -= logb[head].mean()
    logb *= np.log1p(spec.bias_amplitude) / np.max(np.abs(logb[head]))
    return np.exp(logb)


def simulate_mri(labels: VoxelVolume, spec: PhantomSpec, truth: GroundTruth | None = None) -> VoxelVolume:
    """Per-label intensity x planted bias + Gaussian noise (clipped at 0)."""
    lut = _label_lut(spec.mri_intensity)
    clean = lut[labels.data.astype(np.intp)]
    bias = bias_field(spec, labels)
    img = clean * bias
    if spec.noise_sigma > 0:
        rng = slice_rng(spec.seed, STREAM_MRI, 1)
        img = np.clip(img + spec.noise_sigma * rng.standard_normal(img.shape), 0.0, None)
    if truth is not None:
        truth.bias = bias
    return labels.replace(data=img)


# ---------------------------------------------------------------- sectioning geometry


@dataclass
class StackGeometry:
    """Section frame: slice ``k`` pixel ``(r, c)`` sits at stack point ``((c+.5)p, (r+.5)p, (k+.5)t)``."""

    height: int
    width: int
    n_slices: int
    pixel_mm: float
    thickness: float
    stack_to_world: AffineTransform

    @property
    def world_to_stack(self) -> AffineTransform:
        return self.stack_to_world.inverse()

    def stack_points(self, k: float, rows=None, cols=None) -> np.ndarray:
        r = np.arange(self.height) if rows is None else rows
        c = np.arange(self.width) if cols is None else cols
        rr, cc = np.meshgrid(r, c, indexing="ij")
        z = np.full(rr.shape, (k + 0.5) * self.thickness)
        return np.stack([(cc + 0.5) * self.pixel_mm, (rr + 0.5) * self.pixel_mm, z], axis=-1)

    def to_dict(self) -> dict:
        return {"height": self.height, "width": self.width, "n_slices": self.n_slices, "pixel_mm": self.pixel_mm,
                "thickness": self.thickness, "stack_to_world": self.stack_to_world.to_dict()}


def sample_pose(spec: PhantomSpec) -> tuple[np.ndarray, np.ndarray]:
    """Rotation (fixed magnitude, random axis) and translation (fixed length, random direction)."""
    rng = slice_rng(spec.seed, STREAM_POSE, 0)
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    rot = Rotation.from_rotvec(axis * np.radians(spec.pose_rotation_deg)).as_matrix()
    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction)
    return rot, direction * spec.pose_translation_mm


def stack_geometry(spec: PhantomSpec, truth: GroundTruth) -> StackGeometry:
    """Place the section frame around the posed brain and trim near-empty end sections."""
    anat = truth.anatomy
    rot, shift = sample_pose(spec)
    px = spec.pixel_mm
    n_px = int(round(spec.canvas_mm / px))
    axes = np.asarray(spec.brain_axes)
    ext = np.sqrt(np.sum((rot.T * axes[None, :]) ** 2, axis=1))
    offset = rot.T @ shift
    cz = ext[2] + offset[2] + 2 * spec.thickness_mm
    cs = np.array([n_px * px / 2.0, n_px * px / 2.0, cz])
    n = int(np.ceil((2 * ext[2] + 4 * spec.thickness_mm) / spec.thickness_mm))

    def to_world(c):
        return AffineTransform(rot, anat.center - c, c)

    probe = StackGeometry(n_px, n_px, n, px, spec.thickness_mm, to_world(cs))
    area = np.array([np.count_nonzero(anat.tissue_labels_at(probe.stack_to_world.apply(probe.stack_points(k))))
                     for k in range(n)])
    keep = np.nonzero(area >= spec.min_tissue_px)[0]
    if keep.size == 0:
        raise ValueError("no section contains enough tissue")
    first, last = int(keep[0]), int(keep[-1])
    cs = cs - np.array([0.0, 0.0, first * spec.thickness_mm])
    geom = StackGeometry(n_px, n_px, last - first + 1, px, spec.thickness_mm, to_world(cs))
    truth.stack_geometry = geom
    truth.pose = geom.stack_to_world
    truth.world_to_stack = geom.world_to_stack
    return geom


def _subsample_offsets(spec: PhantomSpec) -> np.ndarray:
    s = spec.supersample
    return (np.arange(s) + 0.5) / s - 0.5


def _section_labels(truth: GroundTruth, geom: StackGeometry, k: int, spec: PhantomSpec, rows=None, cols=None,
                    planar=None):
    """Tissue labels at the sub-planes of section ``k`` (shape (S, H, W)).

    ``planar`` optionally replaces the pixel grid by arbitrary (row, col)
    positions in pixel units, shape (H, W, 2).
    """
    out = []
    for dz in _subsample_offsets(spec):
        if planar is None:
            pts = geom.stack_points(k + dz, rows, cols)
        else:
            z = np.full(planar.shape[:-1], (k + dz + 0.5) * geom.thickness)
            pts = np.stack([planar[..., 1] * geom.pixel_mm, planar[..., 0] * geom.pixel_mm, z], axis=-1)
        out.append(truth.anatomy.tissue_labels_at(geom.stack_to_world.apply(pts)))
    return np.stack(out)


def _majority(sub: np.ndarray) -> np.ndarray:
    return np.count_nonzero(sub > 0, axis=0) * 2 > sub.shape[0]


# ---------------------------------------------------------------- blockface


def _clutter_layer(spec: PhantomSpec, geom: StackGeometry, footprint: np.ndarray):
    """Background colour image with rectangles and a ruler outside the tissue footprint."""
    h, w = geom.height, geom.width
    img = np.broadcast_to(BLOCKFACE_BACKGROUND, (h, w, 3)).copy()
    if spec.clutter == 0 and not spec.ruler:
        return img
    free = ~ndi.binary_dilation(footprint, iterations=4)
    rng = slice_rng(spec.seed, STREAM_CLUTTER, 0)
    if spec.ruler:
        band = slice(h - 7, h - 2)
        if free[band, 4:w - 4].all():
            img[band, 4:w - 4] = RULER_COLOR
            ticks = np.arange(6, w - 6, 5)
            img[h - 7:h - 4, ticks] = 0.05
    placed = 0
    for _ in range(50 * max(spec.clutter, 1)):
        if placed >= spec.clutter:
            break
        rh, rw = rng.integers(4, 12, size=2)
        r0 = int(rng.integers(0, h - rh))
        c0 = int(rng.integers(0, w - rw))
        if not free[r0:r0 + rh, c0:c0 + rw].all():
            continue
        img[r0:r0 + rh, c0:c0 + rw] = CLUTTER_COLORS[placed % len(CLUTTER_COLORS)]
        free[max(r0 - 2, 0):r0 + rh + 2, max(c0 - 2, 0):c0 + rw + 2] = False
        placed += 1
    return img


def _tissue_color(sub: np.ndarray, colors: dict, fallback: np.ndarray) -> np.ndarray:
    """Mean colour over the tissue sub-planes (``fallback`` where none is tissue)."""
    lut = np.tile(fallback, (256, 1)).astype(float)
    for label, c in colors.items():
        lut[label] = c
    tissue = (sub > 0)[..., None]
    n = tissue.sum(axis=0)
    total = np.where(tissue, lut[sub], 0.0).sum(axis=0)
    return np.where(n > 0, total / np.maximum(n, 1), fallback)


def simulate_blockface(truth: GroundTruth, spec: PhantomSpec):
    """Mutually aligned blockface photos.

    Returns
    -------
    stack : SliceStack
        RGB photos in pixel units (spacing 1).
    masks : list of ndarray
        True tissue masks (majority of the sub-planes).
    """
    geom = truth.stack_geometry or stack_geometry(spec, truth)
    subs = [_section_labels(truth, geom, k, spec) for k in range(geom.n_slices)]
    masks = [_majority(s) for s in subs]
    footprint = np.any(np.stack(masks), axis=0)
    scene = _clutter_layer(spec, geom, footprint)
    images = []
    truth.transparency = []
    for k, sub in enumerate(subs):
        tissue = sub > 0
        frac = tissue.mean(axis=0)[..., None]
        rgb = scene * (1 - frac) + _tissue_color(sub, BLOCKFACE_TISSUE, BLOCKFACE_BACKGROUND) * frac
        below = np.zeros(masks[k].shape, bool)
        if spec.transparency > 0 and k + 1 < len(subs):
            below = masks[k + 1] & ~masks[k]
            deeper = _tissue_color(subs[k + 1], BLOCKFACE_TISSUE, BLOCKFACE_BACKGROUND)
            rgb[below] = (1 - spec.transparency) * rgb[below] + spec.transparency * deeper[below]
        truth.transparency.append(below)
        if spec.photo_noise > 0:
            rng = slice_rng(spec.seed, STREAM_BLOCKFACE, k)
            rgb = rgb + spec.photo_noise * rng.standard_normal(rgb.shape)
        images.append(RasterImage(np.clip(rgb, 0.0, 1.0)))
    truth.blockface_masks = masks
    truth.blockface_labels = [s[s.shape[0] // 2] for s in subs]
    return SliceStack(tuple(images), spec.thickness_mm, (1.0, 1.0)), masks


# ---------------------------------------------------------------- histology


@dataclass
class SliceTruth:
    """Planted degradation of one section.

    ``forward`` maps section pixels to blockface pixels (``q -> A(q + u(q))``);
    ``inverse`` is the blockface-to-section chain a registration should find.
    """

    index: int
    rotation_deg: float
    scale: float
    translation_px: tuple
    affine: AffineTransform
    warp: DeformationField | None
    warp_inverse: DeformationField | None
    gain: float
    offset: float
    holes: list

    @property
    def forward(self) -> list:
        return ([self.warp] if self.warp is not None else []) + [self.affine]

    @property
    def inverse(self) -> list:
        return [self.affine.inverse()] + ([self.warp_inverse] if self.warp_inverse is not None else [])

    def to_dict(self) -> dict:
        return {"index": self.index, "rotation_deg": self.rotation_deg, "scale": self.scale,
                "translation_px": list(self.translation_px), "affine": self.affine.to_dict(),
                "inverse_affine": self.affine.inverse().to_dict(), "gain": self.gain, "offset": self.offset,
                "holes": self.holes, "has_warp": self.warp is not None}


def _smooth_warp(rng, shape, amplitude: float, sigma: float):
    """Displacement (px) with peak magnitude ``amplitude``, or None when zero."""
    if amplitude <= 0:
        return None
    geom = Geometry(shape, (1.0, 1.0))
    for _ in range(MAX_WARP_DRAWS):
        noise = rng.standard_normal(tuple(shape) + (2,))
        u = np.stack([ndi.gaussian_filter(noise[..., a], sigma, mode="reflect") for a in range(2)], axis=-1)
        u *= amplitude / np.max(np.linalg.norm(u, axis=-1))
        field = DeformationField(u, geom)
        if np.min(jacobian_determinant(field).data) > 0:
            return field
    raise ValueError("could not draw a non-folding warp; lower warp_amplitude_px")


def invert_warp(field: DeformationField, iterations: int = 50, tol: float = 1e-6) -> DeformationField:
    """Fixed-point inverse ``v(y) = -u(y + v(y))``."""
    g = field.geometry
    pts = g.points()
    v = -field.displacement.copy()
    for _ in range(iterations):
        nxt = -field.displacement_at(pts + v)
        done = np.max(np.abs(nxt - v)) < tol
        v = nxt
        if done:
            break
    return DeformationField(v, g)


def _place_holes(rng, mask: np.ndarray, count: int, radius: float) -> list:
    if count <= 0:
        return []
    depth = ndi.distance_transform_edt(mask)
    ok = np.argwhere(depth > radius + 2)
    centres: list = []
    for _ in range(100 * count):
        if len(centres) >= count or ok.size == 0:
            break
        c = ok[rng.integers(len(ok))]
        if all(np.hypot(*(c - np.asarray(o))) > 2 * radius + 3 for o in centres):
            centres.append((int(c[0]), int(c[1])))
    return centres


def simulate_histology(truth: GroundTruth, spec: PhantomSpec):
    """Stained sections with per-section affine + warp, stripes and holes.

    Returns
    -------
    stack : SliceStack
        RGB section photos in pixel units.
    slice_truth : list of SliceTruth
    """
    geom = truth.stack_geometry or stack_geometry(spec, truth)
    h, w = geom.height, geom.width
    centre = np.array([h / 2.0, w / 2.0])
    grid = np.stack(np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij"), axis=-1)
    dens_lut = _label_lut(spec.stain_density)
    images, records, masks, labels = [], [], [], []
    gains, offsets = [], []
    for k in range(geom.n_slices):
        rng = slice_rng(spec.seed, STREAM_HISTOLOGY, k)
        theta = float(rng.uniform(-spec.slice_rotation_deg, spec.slice_rotation_deg))
        scale = float(rng.uniform(1 - spec.slice_scale, 1 + spec.slice_scale))
        shift = rng.uniform(-spec.slice_translation_px, spec.slice_translation_px, size=2)
        affine = AffineTransform(scale * rotation_matrix(np.radians(theta)), shift, centre)
        warp = _smooth_warp(rng, (h, w), spec.warp_amplitude_px, spec.warp_sigma_px)
        q = grid if warp is None else grid + warp.displacement
        p = affine.apply(q)
        sub = _section_labels(truth, geom, k, spec, planar=p)
        gain = float(rng.uniform(*spec.stripe_gain))
        off = float(rng.uniform(*spec.stripe_offset))
        dens = dens_lut[sub]
        dens = np.where(sub > 0, np.clip(gain * dens + off, 0.0, 1.0), 0.0).mean(axis=0)
        mask = _majority(sub)
        holes = _place_holes(rng, mask, spec.holes, spec.hole_radius_px)
        rr, cc = np.mgrid[0:h, 0:w]
        for (r0, c0) in holes:
            disc = (rr - r0) ** 2 + (cc - c0) ** 2 <= spec.hole_radius_px**2
            mask = mask & ~disc
            dens = np.where(disc, 0.0, dens)
        rgb = SLIDE_WHITE[None, None, :] * (1 - dens[..., None]) + STAIN_PURPLE[None, None, :] * dens[..., None]
        if spec.photo_noise > 0:
            rgb = rgb + spec.photo_noise * rng.standard_normal(rgb.shape)
        images.append(RasterImage(np.clip(rgb, 0.0, 1.0)))
        records.append(SliceTruth(k, theta, scale, (float(shift[0]), float(shift[1])), affine, warp,
                                  invert_warp(warp) if warp is not None else None, gain, off,
                                  [list(c) for c in holes]))
        masks.append(mask)
        labels.append(sub[sub.shape[0] // 2])
        gains.append(gain)
        offsets.append(off)
    truth.slice_truth = records
    truth.histology_masks = masks
    truth.histology_labels = labels
    truth.stripes = {"gains": gains, "offsets": offsets}
    return SliceStack(tuple(images), spec.thickness_mm, (1.0, 1.0)), records
