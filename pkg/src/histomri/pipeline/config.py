"""Pipeline configuration (TOML or JSON) and its validation."""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from ..assembly.alignment import CoarseAlignParams
from ..assembly.intensity import IntensityParams
from ..errors import ConfigInvalid
from ..preproc.reference import PreprocParams
from ..registration.affine import RegistrationParams
from ..segmentation.segment import SegmentationOptions

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

SECTIONS = {
    "seed", "threads", "output_dir", "inputs", "stack", "segmentation", "registration_2d", "intensity",
    "preproc", "coarse_align", "registration_3d", "reconstruction", "evaluation",
}
INPUT_KEYS = {"histology", "blockface", "reference", "labels", "histology_labels"}
REQUIRED_INPUTS = ("histology", "blockface", "reference")

# Desk-scale defaults; every entry can be overridden from the config file.
DEFAULT_SEGMENTATION = {"max_samples": 10_000, "n_init": 2}
DEFAULT_REGISTRATION_2D = {}
DEFAULT_REGISTRATION_3D = {"min_level": 1, "levels": 3, "max_samples": 50_000}
DEFAULT_EVALUATION = {"structures": {}, "k": 50, "p": 2.0}


def _merge(defaults: dict, override: dict | None) -> dict:
    out = dict(defaults)
    out.update(override or {})
    return out


@dataclass
class PipelineConfig:
    """Validated run description.

    Paths are absolute (relative entries resolve against the config file).
    Parameter blocks are kept as plain dicts so they hash stably; the typed
    parameter objects are built on demand.
    """

    inputs: dict
    output_dir: Path
    seed: int = 0
    threads: int = 1
    stack: dict = field(default_factory=dict)
    segmentation: dict = field(default_factory=dict)
    registration_2d: dict = field(default_factory=dict)
    intensity: dict = field(default_factory=dict)
    preproc: dict = field(default_factory=dict)
    coarse_align: dict = field(default_factory=dict)
    registration_3d: dict = field(default_factory=dict)
    reconstruction: dict = field(default_factory=dict)
    evaluation: dict = field(default_factory=dict)
    source: Path | None = None

    # typed views -----------------------------------------------------
    def segmentation_options(self) -> SegmentationOptions:
        d = _merge(DEFAULT_SEGMENTATION, self.segmentation)
        d.setdefault("seed", self.seed)
        return SegmentationOptions.from_dict(d)

    def registration_2d_params(self) -> RegistrationParams:
        d = _merge(DEFAULT_REGISTRATION_2D, self.registration_2d)
        d.pop("diffeo", None)
        d.pop("diffeo_params", None)
        d.setdefault("seed", self.seed)
        return RegistrationParams.from_dict(d)

    def diffeo_2d(self) -> RegistrationParams | None:
        if not self.registration_2d.get("diffeo", False):
            return None
        d = dict(self.registration_2d.get("diffeo_params", {}))
        d.setdefault("seed", self.seed)
        return RegistrationParams.from_dict(d)

    def intensity_params(self) -> IntensityParams:
        return IntensityParams(**self.intensity)

    def preproc_params(self) -> PreprocParams:
        return PreprocParams.from_dict(self.preproc)

    def coarse_align_params(self) -> CoarseAlignParams:
        d = dict(self.coarse_align)
        reg = dict(d.get("registration", {}))
        reg.setdefault("seed", self.seed)
        d["registration"] = reg
        return CoarseAlignParams.from_dict(d)

    def registration_3d_params(self) -> RegistrationParams:
        d = _merge(DEFAULT_REGISTRATION_3D, self.registration_3d)
        d.setdefault("seed", self.seed)
        return RegistrationParams.from_dict(d)

    def evaluation_params(self) -> dict:
        return _merge(DEFAULT_EVALUATION, self.evaluation)

    @property
    def color(self) -> bool:
        return bool(self.reconstruction.get("color", True))

    def to_dict(self) -> dict:
        return {
            "seed": self.seed, "threads": self.threads, "output_dir": str(self.output_dir),
            "inputs": {k: str(v) for k, v in self.inputs.items()}, "stack": self.stack,
            "segmentation": self.segmentation, "registration_2d": self.registration_2d,
            "intensity": self.intensity, "preproc": self.preproc, "coarse_align": self.coarse_align,
            "registration_3d": self.registration_3d, "reconstruction": self.reconstruction,
            "evaluation": self.evaluation,
        }


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigInvalid(f"config file not found: {path}")
    text = path.read_text()
    try:
        if path.suffix.lower() == ".json":
            return json.loads(text)
        return tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigInvalid(f"cannot parse {path}: {exc}") from exc


def _series_ok(path: Path) -> bool:
    if path.is_file():
        return path.suffix == ".json"
    return path.is_dir() and ((path / "stack.json").is_file() or any(path.glob("*.png")))


def _check_params(cfg: PipelineConfig):
    """Build every typed parameter object once so bad values fail up front."""
    try:
        cfg.segmentation_options()
        cfg.registration_2d_params()
        cfg.diffeo_2d()
        cfg.intensity_params()
        cfg.preproc_params()
        cfg.coarse_align_params()
        cfg.registration_3d_params()
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"invalid parameter block: {exc}") from exc
    ev = cfg.evaluation_params()
    if not isinstance(ev["structures"], dict) or not all(isinstance(v, int) for v in ev["structures"].values()):
        raise ConfigInvalid("evaluation.structures must map names to integer labels")
    if int(ev["k"]) < 1 or float(ev["p"]) <= 0:
        raise ConfigInvalid("evaluation.k must be >= 1 and evaluation.p > 0")
    pp = cfg.preproc_params()
    if pp.spacing_mm is not None and float(pp.spacing_mm) <= 0:
        raise ConfigInvalid("preproc.spacing_mm must be positive")
    for key in ("thickness_mm", "pixels_per_mm"):
        if key in cfg.stack and float(cfg.stack[key]) <= 0:
            raise ConfigInvalid(f"stack.{key} must be positive")


def validate_config(raw: dict, base_dir=None, source=None) -> PipelineConfig:
    """Check keys, paths and parameter ranges; raise ConfigInvalid on the first problem."""
    if not isinstance(raw, dict):
        raise ConfigInvalid("config must be a table/object")
    unknown = set(raw) - SECTIONS
    if unknown:
        raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
    base = Path(base_dir or ".").resolve()
    inputs = dict(raw.get("inputs") or {})
    bad = set(inputs) - INPUT_KEYS
    if bad:
        raise ConfigInvalid(f"unknown inputs: {sorted(bad)}")
    for key in REQUIRED_INPUTS:
        if key not in inputs:
            raise ConfigInvalid(f"inputs.{key} is required")
    resolved = {}
    for key, value in inputs.items():
        p = Path(value)
        p = p if p.is_absolute() else base / p
        resolved[key] = p.resolve()
    for key in ("histology", "blockface"):
        if not _series_ok(resolved[key]):
            raise ConfigInvalid(f"inputs.{key}: {resolved[key]} is not a slice directory or stack manifest")
    for key in ("reference", "labels", "histology_labels"):
        if key in resolved and not resolved[key].is_file():
            raise ConfigInvalid(f"inputs.{key}: {resolved[key]} does not exist")
    try:
        threads = int(raw.get("threads", 1))
        seed = int(raw.get("seed", 0))
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"seed/threads must be integers: {exc}") from exc
    if threads < 1:
        raise ConfigInvalid("threads must be >= 1")
    out = Path(raw.get("output_dir", "output"))
    out = (out if out.is_absolute() else base / out).resolve()
    blocks = {}
    for key in ("stack", "segmentation", "registration_2d", "intensity", "preproc", "coarse_align",
                "registration_3d", "reconstruction", "evaluation"):
        value = raw.get(key) or {}
        if not isinstance(value, dict):
            raise ConfigInvalid(f"{key} must be a table/object")
        blocks[key] = value
    cfg = PipelineConfig(inputs=resolved, output_dir=out, seed=seed, threads=threads, source=source, **blocks)
    _check_params(cfg)
    return cfg


def load_config(path, overrides: dict | None = None) -> PipelineConfig:
    """Read and validate a TOML (``.toml``) or JSON (``.json``) config file."""
    path = Path(path)
    raw = read_config_file(path)
    raw.update(overrides or {})
    return validate_config(raw, path.parent, path.resolve())
