"""Analytic digital anatomy and its rasterisation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core.containers import Geometry, VoxelVolume
from ..errors import OverlappingStructures
from ..registration.transforms import rotation_matrix
from .spec import BRAIN, SKULL, PhantomSpec


def slice_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent stream per ``(seed, keys...)``; parallel drawing never changes outputs."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]))


STREAM_ANATOMY, STREAM_MRI, STREAM_POSE, STREAM_BLOCKFACE, STREAM_HISTOLOGY, STREAM_CLUTTER = range(6)


@dataclass
class Anatomy:
    """Ellipsoid model in world (reference) coordinates, mm."""

    spec: PhantomSpec
    center: np.ndarray
    rotations: dict = field(default_factory=dict)

    def _inside(self, points: np.ndarray, offset, axes, rot) -> np.ndarray:
        local = (points - (self.center + np.asarray(offset, float))) @ rot
        return np.sum((local / np.asarray(axes, float)) ** 2, axis=-1) < 1.0

    def labels_at(self, points: np.ndarray) -> np.ndarray:
        """Label of each world point (skull only where ``with_skull``)."""
        return self._labels(points, with_skull=True)

    def tissue_labels_at(self, points: np.ndarray) -> np.ndarray:
        """Labels of the excised specimen: the brain and its structures, no skull."""
        return self._labels(points, with_skull=False)

    def _labels(self, points: np.ndarray, with_skull: bool) -> np.ndarray:
        s = self.spec
        eye = np.eye(3)
        out = np.zeros(points.shape[:-1], dtype=np.uint8)
        brain_axes = np.asarray(s.brain_axes)
        if with_skull:
            inner = brain_axes + s.skull_gap_mm
            outer = inner + s.skull_thickness_mm
            skull = self._inside(points, (0, 0, 0), outer, eye) & ~self._inside(points, (0, 0, 0), inner, eye)
            out[skull] = SKULL
        brain = self._inside(points, (0, 0, 0), brain_axes, eye)
        out[brain] = BRAIN
        for st in s.structures:
            m = self._inside(points, st.offset, st.semi_axes, self.rotations[st.name]) & brain
            out[m] = st.label
        return out

    def analytic_volume(self, name: str) -> float:
        st = next(s for s in self.spec.structures if s.name == name)
        a, b, c = st.semi_axes
        return 4.0 / 3.0 * np.pi * a * b * c


def build_anatomy(spec: PhantomSpec) -> Anatomy:
    geom = reference_geometry(spec)
    rotations = {s.name: rotation_matrix(np.radians(s.angles_deg)) for s in spec.structures}
    return Anatomy(spec, geom.center.copy(), rotations)


def reference_geometry(spec: PhantomSpec) -> Geometry:
    return Geometry(spec.shape, (spec.spacing,) * 3, (0.0, 0.0, 0.0))


def _check_structures(anat: Anatomy, points: np.ndarray):
    spec = anat.spec
    brain = anat._inside(points, (0, 0, 0), spec.brain_axes, np.eye(3))
    claims = np.zeros(points.shape[:-1], dtype=np.int16)
    for st in spec.structures:
        m = anat._inside(points, st.offset, st.semi_axes, anat.rotations[st.name])
        if np.any(m & ~brain):
            raise OverlappingStructures(f"structure {st.name!r} extends outside the brain")
        claims += m
    if np.any(claims > 1):
        raise OverlappingStructures("interior structures overlap")
    labels = [st.label for st in spec.structures]
    if len(set(labels)) != len(labels) or {BRAIN, SKULL} & set(labels):
        raise OverlappingStructures("structure labels must be distinct and differ from brain/skull")


def generate_anatomy(spec: PhantomSpec):
    """Label volume on the reference grid and a ground-truth record around it.

    Raises
    ------
    OverlappingStructures
        Interior structures intersect each other or leave the brain.
    """
    anat = build_anatomy(spec)
    geom = reference_geometry(spec)
    pts = geom.points()
    _check_structures(anat, pts)
    labels = VoxelVolume(anat.labels_at(pts).astype(float), geom.spacing, geom.origin)
    return labels, GroundTruth(labels=labels, anatomy=anat)


@dataclass
class GroundTruth:
    """Everything planted while simulating; filled in stage by stage."""

    labels: VoxelVolume
    anatomy: Anatomy
    bias: np.ndarray | None = None
    pose: object | None = None
    world_to_stack: object | None = None
    stack_geometry: object | None = None
    blockface_masks: list = field(default_factory=list)
    blockface_labels: list = field(default_factory=list)
    transparency: list = field(default_factory=list)
    slice_truth: list = field(default_factory=list)
    histology_masks: list = field(default_factory=list)
    histology_labels: list = field(default_factory=list)
    stripes: dict = field(default_factory=dict)
