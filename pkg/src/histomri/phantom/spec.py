"""Phantom description: anatomy, acquisition geometry and artifact knobs."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

BACKGROUND, BRAIN, SKULL, VENTRICLE, HIPPOCAMPUS, CAUDATE = 0, 1, 2, 3, 4, 5
STRUCTURE_LABELS = {"ventricle": VENTRICLE, "hippocampus": HIPPOCAMPUS, "caudate": CAUDATE}


@dataclass
class Ellipsoid:
    """Ellipsoid given relative to the brain centre (mm), rotated by Euler angles (deg)."""

    name: str
    label: int
    offset: tuple = (0.0, 0.0, 0.0)
    semi_axes: tuple = (5.0, 5.0, 5.0)
    angles_deg: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        self.label = int(self.label)
        self.offset = tuple(float(v) for v in self.offset)
        self.semi_axes = tuple(float(v) for v in self.semi_axes)
        self.angles_deg = tuple(float(v) for v in self.angles_deg)


def _default_structures() -> list:
    return [
        Ellipsoid("ventricle", VENTRICLE, (0.0, 4.0, 6.0), (7.0, 15.0, 6.0), (0.0, 0.0, 8.0)),
        Ellipsoid("hippocampus", HIPPOCAMPUS, (18.0, -14.0, -8.0), (8.0, 13.0, 7.0), (10.0, 0.0, -15.0)),
        Ellipsoid("caudate", CAUDATE, (-17.0, 12.0, 6.0), (7.0, 11.0, 8.0), (0.0, 12.0, 20.0)),
    ]


@dataclass
class PhantomSpec:
    """Everything that determines a phantom; ``seed`` drives every random draw."""

    seed: int = 42
    shape: tuple = (128, 128, 128)
    spacing: float = 1.0
    brain_axes: tuple = (42.0, 52.0, 36.0)
    skull_gap_mm: float = 3.0
    skull_thickness_mm: float = 4.0
    structures: list = field(default_factory=_default_structures)

    # reference volume
    mri_intensity: dict = field(default_factory=lambda: {
        "brain": 0.6, "skull": 0.9, "ventricle": 0.15, "hippocampus": 0.42, "caudate": 0.8})
    bias_amplitude: float = 0.2
    noise_sigma: float = 0.02

    # sectioning
    thickness_mm: float = 0.4
    pixels_per_mm: float = 1.25
    canvas_mm: float = 150.0
    supersample: int = 3
    min_tissue_px: int = 100
    pose_rotation_deg: float = 15.0
    pose_translation_mm: float = 8.0

    # blockface
    clutter: int = 6
    ruler: bool = True
    transparency: float = 0.0
    photo_noise: float = 0.01

    # histology
    slice_rotation_deg: float = 5.0
    slice_scale: float = 0.05
    slice_translation_px: float = 6.0
    warp_amplitude_px: float = 1.0
    warp_sigma_px: float = 8.0
    stripe_gain: tuple = (0.85, 1.15)
    stripe_offset: tuple = (-0.05, 0.05)
    holes: int = 1
    hole_radius_px: float = 3.0
    stain_density: dict = field(default_factory=lambda: {
        "brain": 0.55, "ventricle": 0.15, "hippocampus": 0.85, "caudate": 0.32})

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        self.brain_axes = tuple(float(a) for a in self.brain_axes)
        self.stripe_gain = tuple(float(v) for v in self.stripe_gain)
        self.stripe_offset = tuple(float(v) for v in self.stripe_offset)
        self.structures = [s if isinstance(s, Ellipsoid) else Ellipsoid(**s) for s in self.structures]
        if len(self.shape) != 3 or min(self.shape) < 8 or self.spacing <= 0:
            raise ValueError("phantom grid must be 3D with dims >= 8 and positive spacing")
        if self.thickness_mm <= 0 or self.pixels_per_mm <= 0 or self.supersample < 1:
            raise ValueError("sectioning parameters must be positive")

    @property
    def pixel_mm(self) -> float:
        return 1.0 / self.pixels_per_mm

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shape"] = list(self.shape)
        return d

    @classmethod
    def from_dict(cls, d: dict | None) -> "PhantomSpec":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown phantom spec keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "PhantomSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path
