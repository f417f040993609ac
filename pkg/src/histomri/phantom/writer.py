"""Generate a phantom and write it to disk in the layout the pipeline reads."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..assembly.stack import SliceStack, StackManifest
from ..core.containers import VoxelVolume
from ..core.io import save_image, write_nvol
from ..registration.transforms import save_chain
from .anatomy import GroundTruth, generate_anatomy
from .simulate import simulate_blockface, simulate_histology, simulate_mri, stack_geometry
from .spec import STRUCTURE_LABELS, PhantomSpec

logger = logging.getLogger(__name__)


@dataclass
class Phantom:
    """In-memory phantom: reference volume, both section series and the ground truth."""

    spec: PhantomSpec
    labels: VoxelVolume
    mri: VoxelVolume
    blockface: SliceStack
    histology: SliceStack
    truth: GroundTruth


def generate_phantom(spec: PhantomSpec | None = None) -> Phantom:
    spec = spec or PhantomSpec()
    labels, truth = generate_anatomy(spec)
    mri = simulate_mri(labels, spec, truth)
    stack_geometry(spec, truth)
    blockface, _ = simulate_blockface(truth, spec)
    histology, _ = simulate_histology(truth, spec)
    logger.info("phantom: %d sections of %dx%d px", len(blockface), *blockface.shape)
    return Phantom(spec, labels, mri, blockface, histology, truth)


def slice_stack_volume(slices) -> np.ndarray:
    """Per-section 2D arrays stacked like :func:`stack_slices` (``vol[:, :, k] = img.T``)."""
    return np.stack([np.asarray(s, float).T for s in slices], axis=-1)


def _write_series(stack: SliceStack, directory: Path, spec: PhantomSpec) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for k, img in enumerate(stack.slices):
        p = directory / f"{k:04d}.png"
        save_image(img, p, bit_depth=8, sidecar=False)
        names.append(str(p.resolve()))
    manifest = StackManifest(names, spec.thickness_mm, spec.pixels_per_mm, "axial", list(range(len(names))))
    return manifest.save(directory / "stack.json")


def default_pipeline_config(spec: PhantomSpec) -> dict:
    """Pipeline settings tuned for the desk-scale phantom (1 mm working grid)."""
    return {
        "seed": spec.seed,
        "threads": 1,
        "output_dir": "run",
        "inputs": {
            "histology": "histology/stack.json",
            "blockface": "blockface/stack.json",
            "reference": "mri.nvol",
            "labels": "labels.nvol",
            "histology_labels": "truth/histology_labels.nvol",
        },
        "preproc": {"spacing_mm": spec.spacing},
        "evaluation": {"structures": dict(STRUCTURE_LABELS)},
    }


def write_phantom(phantom: Phantom, out_dir) -> Path:
    """Write ``mri.nvol``, ``labels.nvol``, both PNG series, ``truth/`` and ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec, truth = phantom.spec, phantom.truth
    geo = truth.stack_geometry
    files: dict = {}

    def rel(p: Path) -> str:
        return str(p.resolve().relative_to(out.resolve()))

    for name, vol in (("mri", phantom.mri), ("labels", phantom.labels)):
        p = write_nvol(out / f"{name}.nvol", vol.data, vol.spacing, vol.origin)
        files[name] = rel(p)
    files["blockface"] = rel(_write_series(phantom.blockface, out / "blockface", spec))
    files["histology"] = rel(_write_series(phantom.histology, out / "histology", spec))

    tdir = out / "truth"
    tdir.mkdir(exist_ok=True)
    stack_spacing = (spec.pixel_mm, spec.pixel_mm, spec.thickness_mm)
    for name, slices in (("histology_labels", truth.histology_labels), ("blockface_labels", truth.blockface_labels),
                         ("histology_masks", truth.histology_masks), ("blockface_masks", truth.blockface_masks)):
        p = write_nvol(tdir / f"{name}.nvol", slice_stack_volume(slices), stack_spacing)
        files[name] = rel(p)
    p = write_nvol(tdir / "bias.nvol", truth.bias, phantom.labels.spacing, phantom.labels.origin)
    files["bias"] = rel(p)
    (tdir / "stripes.json").write_text(json.dumps(truth.stripes, indent=2))
    files["stripes"] = "truth/stripes.json"
    (tdir / "pose.json").write_text(json.dumps({
        "stack_geometry": geo.to_dict(),
        "stack_to_world": truth.pose.to_dict(),
        "world_to_stack": truth.world_to_stack.to_dict(),
        "rotation_deg": spec.pose_rotation_deg,
        "translation_mm": spec.pose_translation_mm,
    }, indent=2))
    files["pose"] = "truth/pose.json"
    xdir = tdir / "transforms"
    for rec in truth.slice_truth:
        save_chain(rec.inverse, xdir, f"slice_{rec.index:04d}")
    (tdir / "slices.json").write_text(json.dumps([r.to_dict() for r in truth.slice_truth], indent=2))
    files["transforms"] = "truth/transforms"
    files["slices"] = "truth/slices.json"
    spec.save(tdir / "spec.json")
    files["spec"] = "truth/spec.json"

    cfg = out / "pipeline.json"
    cfg.write_text(json.dumps(default_pipeline_config(spec), indent=2))
    files["pipeline_config"] = cfg.name

    digest = hashlib.sha256(json.dumps(spec.to_dict(), sort_keys=True).encode()).hexdigest()
    manifest = {
        "seed": spec.seed,
        "spec_sha256": digest,
        "n_slices": len(phantom.blockface),
        "slice_shape": list(phantom.blockface.shape),
        "thickness_mm": spec.thickness_mm,
        "pixels_per_mm": spec.pixels_per_mm,
        "stack_width_mm": geo.width * spec.pixel_mm,
        "stack_height_mm": geo.height * spec.pixel_mm,
        "structures": dict(STRUCTURE_LABELS),
        "structure_volumes_mm3": {s.name: truth.anatomy.analytic_volume(s.name) for s in spec.structures},
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out / "manifest.json"
