"""Pipeline stages: each reads upstream files, writes its own directory, returns its outputs."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from ..assembly.alignment import coarse_align
from ..assembly.intensity import intensity_correct
from ..assembly.replay import reconstruct_color, replay_stack
from ..assembly.stack import SliceStack, StackManifest, calibrate_scale, stack_slices, unstack
from ..core.containers import BinaryMask, RasterImage, VoxelVolume
from ..core.io import load_image, load_mask, load_volume, read_nvol, save_image, save_volume, write_nvol
from ..errors import ConfigInvalid, InsufficientOverlap, NoTissueFound
from ..evaluation.report import evaluate_structures
from ..preproc.reference import preprocess_reference
from ..registration.affine import register_affine
from ..registration.diffeo import register_diffeo
from ..registration.transforms import AffineTransform, DeformationField, apply_transform, load_chain, save_chain
from ..segmentation.color import rgb_to_yiq
from ..segmentation.segment import segment_blockface, segment_histology
from .config import PipelineConfig

logger = logging.getLogger(__name__)

IMAGE_SPACING = (1.0, 1.0)  # 2D work happens in pixel units; calibration follows stacking
CHAIN_3D = "histology_to_reference"


# ---------------------------------------------------------------- inputs


@dataclass
class Series:
    paths: list
    thickness: float
    pixels_per_mm: float
    manifest: Path | None

    @property
    def files(self) -> list:
        return [Path(p) for p in self.paths] + ([self.manifest] if self.manifest else [])


def load_series(path: Path, overrides: dict) -> Series:
    """Slice list from a stack manifest (file or ``<dir>/stack.json``) or a directory of PNGs."""
    path = Path(path)
    manifest = path if path.is_file() else path / "stack.json"
    if manifest.is_file():
        m = StackManifest.load(manifest)
        paths, thickness, ppm = m.slices, m.thickness_mm, m.pixels_per_mm
    else:
        paths = sorted(str(p) for p in path.glob("*.png"))
        thickness = ppm = None
        manifest = None
    thickness = overrides.get("thickness_mm", thickness)
    ppm = overrides.get("pixels_per_mm", ppm)
    if thickness is None or ppm is None:
        raise ConfigInvalid(f"{path}: slice thickness and pixels_per_mm must come from a manifest or [stack]")
    if not paths:
        raise ConfigInvalid(f"{path}: no slice images")
    return Series(list(paths), float(thickness), float(ppm), manifest)


# ---------------------------------------------------------------- helpers


class Context:
    """Shared state of one run: config, output root and a per-slice executor."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.root = Path(config.output_dir)
        self._series = {}

    def series(self, key: str) -> Series:
        if key not in self._series:
            self._series[key] = load_series(self.config.inputs[key], self.config.stack)
        return self._series[key]

    def dir(self, stage: str) -> Path:
        d = self.root / stage
        d.mkdir(parents=True, exist_ok=True)
        return d

    def map(self, fn: Callable, items) -> list:
        items = list(items)
        if self.config.threads <= 1 or len(items) <= 1:
            return [fn(i) for i in items]
        with ThreadPoolExecutor(max_workers=self.config.threads) as pool:
            return list(pool.map(fn, items))

    def rel(self, path) -> str:
        return str(Path(path).resolve().relative_to(self.root.resolve()))


def tissue_gray(image: RasterImage, mask: np.ndarray, invert: bool) -> RasterImage:
    """Luminance (or ``1 - Y`` for stained sections) inside the tissue mask, 0 elsewhere."""
    y = rgb_to_yiq(image).luminance().data
    g = 1.0 - y if invert else y
    return RasterImage(np.where(mask, np.clip(g, 0.0, None), 0.0), image.spacing)


def _as_pixels(image: RasterImage) -> RasterImage:
    return image.replace(spacing=IMAGE_SPACING)


def _mask_path(ctx: Context, stage: str, k: int) -> Path:
    return ctx.root / stage / "masks" / f"{k:04d}.png"


def _load_slice_mask(ctx: Context, stage: str, k: int) -> np.ndarray:
    return load_mask(_mask_path(ctx, stage, k)).data


def _chain_dir(ctx: Context) -> Path:
    return ctx.root / "register-2d" / "transforms"


def load_2d_chains(ctx: Context, n: int) -> list:
    return [load_chain(_chain_dir(ctx), f"slice_{k:04d}") for k in range(n)]


def _write_json(path: Path, data) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True))
    return path


# ---------------------------------------------------------------- stages


def _segment(ctx: Context, stage: str, series_key: str, fn) -> list:
    series = ctx.series(series_key)
    opts = ctx.config.segmentation_options()
    out = ctx.dir(stage) / "masks"

    def one(k):
        img = _as_pixels(load_image(series.paths[k]))
        try:
            mask = fn(img, opts).data
        except NoTissueFound:
            logger.warning("%s: no tissue in slice %d", stage, k)
            mask = np.zeros(img.shape[:2], bool)
        p = _mask_path(ctx, stage, k)
        save_image(BinaryMask(mask, IMAGE_SPACING), p, sidecar=False)
        return p, int(mask.sum())

    res = ctx.map(one, range(len(series.paths)))
    summary = _write_json(out.parent / "summary.json", {
        "tissue_pixels": [c for _, c in res], "empty": [k for k, (_, c) in enumerate(res) if c == 0]})
    return [p for p, _ in res] + [summary]


def stage_segment_blockface(ctx: Context) -> list:
    return _segment(ctx, "segment-blockface", "blockface", segment_blockface)


def stage_segment_histology(ctx: Context) -> list:
    return _segment(ctx, "segment-histology", "histology", segment_histology)


def stage_register_2d(ctx: Context) -> list:
    bf, hs = ctx.series("blockface"), ctx.series("histology")
    if len(bf.paths) != len(hs.paths):
        raise ValueError(f"{len(hs.paths)} histology slices but {len(bf.paths)} blockface slices")
    params = ctx.config.registration_2d_params()
    dparams = ctx.config.diffeo_2d()
    out = _chain_dir(ctx)
    out.mkdir(parents=True, exist_ok=True)

    def one(k):
        fimg = _as_pixels(load_image(bf.paths[k]))
        mimg = _as_pixels(load_image(hs.paths[k]))
        fm = _load_slice_mask(ctx, "segment-blockface", k)
        mm = _load_slice_mask(ctx, "segment-histology", k)
        status = "registered"
        chain = [AffineTransform.identity(2, fimg.geometry.center)]
        if fm.any() and mm.any():
            fixed = tissue_gray(fimg, fm, invert=False)
            moving = tissue_gray(mimg, mm, invert=True)
            fmask, mmask = BinaryMask(fm, IMAGE_SPACING), BinaryMask(mm, IMAGE_SPACING)
            try:
                t = register_affine(fixed, moving, params, fixed_mask=fmask, moving_mask=mmask)
                chain = [t]
                if dparams is not None:
                    warped = apply_transform(moving, chain, fixed.geometry)
                    phi = register_diffeo(fixed, warped, dparams)
                    chain = [phi, t]
            except InsufficientOverlap:
                logger.warning("register-2d: slice %d has too little overlap; identity kept", k)
                status = "identity"
        else:
            status = "empty"
        names = save_chain(chain, out, f"slice_{k:04d}")
        files = [out / f"slice_{k:04d}.chain.json"] + [out / n for n in names]
        for n in names:
            if n.endswith(".nvol"):
                files.append(out / n.replace(".nvol", ".json"))
                inv = out / n.replace(".nvol", "_inverse.nvol")
                if inv.exists():
                    files.append(inv)
        return files, status

    res = ctx.map(one, range(len(bf.paths)))
    summary = _write_json(ctx.root / "register-2d" / "summary.json", {"status": [s for _, s in res]})
    return [f for files, _ in res for f in files] + [summary]


def _stack_volume(images, thickness, ppm) -> VoxelVolume:
    st = SliceStack(tuple(RasterImage(np.asarray(i, float), IMAGE_SPACING) for i in images), thickness,
                    IMAGE_SPACING)
    return stack_slices(calibrate_scale(st, ppm))


def stage_stack(ctx: Context) -> list:
    bf, hs = ctx.series("blockface"), ctx.series("histology")
    chains = load_2d_chains(ctx, len(hs.paths))

    def one(k):
        mimg = _as_pixels(load_image(hs.paths[k]))
        target = _as_pixels(load_image(bf.paths[k])).geometry
        mm = _load_slice_mask(ctx, "segment-histology", k)
        gray = tissue_gray(mimg, mm, invert=True)
        g = apply_transform(gray, chains[k], target).data
        m = apply_transform(BinaryMask(mm, IMAGE_SPACING), chains[k], target).data
        return g, m

    res = ctx.map(one, range(len(hs.paths)))
    vol = _stack_volume([g for g, _ in res], hs.thickness, hs.pixels_per_mm)
    mask = _stack_volume([m for _, m in res], hs.thickness, hs.pixels_per_mm)
    d = ctx.dir("stack")
    return [save_volume(vol, d / "histology.nvol"), save_volume(BinaryMask(mask.data > 0.5, mask.spacing),
                                                                 d / "mask.nvol")]


def stage_intensity(ctx: Context) -> list:
    vol = load_volume(ctx.root / "stack" / "histology.nvol")
    mask = load_mask(ctx.root / "stack" / "mask.nvol")
    corrected, imap = intensity_correct(vol, 2, mask.data, ctx.config.intensity_params())
    d = ctx.dir("intensity")
    return [save_volume(corrected, d / "histology.nvol"), _write_json(d / "map.json", imap.to_dict())]


def stage_preprocess_reference(ctx: Context) -> list:
    ref = load_volume(ctx.config.inputs["reference"])
    res = preprocess_reference(ref, ctx.config.preproc_params(), return_details=True)
    d = ctx.dir("preprocess-reference")
    out = [save_volume(res.volume, d / "reference.nvol"), save_volume(res.mask, d / "mask.nvol")]
    if res.bias is not None:
        out.append(save_volume(res.bias.field, d / "bias.nvol"))
    return out


def stage_coarse_align(ctx: Context) -> list:
    moving = load_volume(ctx.root / "intensity" / "histology.nvol")
    mmask = load_mask(ctx.root / "stack" / "mask.nvol")
    fixed = load_volume(ctx.root / "preprocess-reference" / "reference.nvol")
    fmask = load_mask(ctx.root / "preprocess-reference" / "mask.nvol")
    rigid = coarse_align(moving, fixed, ctx.config.coarse_align_params(), mmask, fmask)
    d = ctx.dir("coarse-align")
    resampled = apply_transform(moving, [rigid], fixed.geometry)
    return [rigid.save(d / "rigid.json"), save_volume(resampled, d / "resampled.nvol")]


def stage_register_3d(ctx: Context) -> list:
    fixed = load_volume(ctx.root / "preprocess-reference" / "reference.nvol")
    moving = load_volume(ctx.root / "coarse-align" / "resampled.nvol")
    rigid = AffineTransform.load(ctx.root / "coarse-align" / "rigid.json")
    phi = register_diffeo(fixed, moving, ctx.config.registration_3d_params())
    d = ctx.dir("register-3d")
    names = save_chain([phi, rigid], d, CHAIN_3D)
    hist = load_volume(ctx.root / "intensity" / "histology.nvol")
    registered = apply_transform(hist, [phi, rigid], fixed.geometry)
    files = [d / f"{CHAIN_3D}.chain.json"] + [d / n for n in names]
    files += [d / n.replace(".nvol", ".json") for n in names if n.endswith(".nvol")]
    files += [d / n.replace(".nvol", "_inverse.nvol") for n in names if n.endswith(".nvol")]
    files.append(save_volume(registered, d / "registered.nvol"))
    return files


def load_3d_chain(ctx: Context) -> list:
    return load_chain(ctx.root / "register-3d", CHAIN_3D)


def stage_reconstruct(ctx: Context) -> list:
    hs = ctx.series("histology")
    images = tuple(load_image(p) for p in hs.paths)
    stack = calibrate_scale(SliceStack(images, hs.thickness, IMAGE_SPACING), hs.pixels_per_mm)
    target = load_volume(ctx.root / "preprocess-reference" / "reference.nvol").geometry
    color = reconstruct_color(stack, load_2d_chains(ctx, len(images)), load_3d_chain(ctx), target, IMAGE_SPACING)
    return [save_volume(color, ctx.dir("reconstruct") / "color.nvol")]


def registered_labels(ctx: Context) -> VoxelVolume:
    """Histology label sections replayed (nearest) through the stored 2D and 3D chains."""
    hs = ctx.series("histology")
    data, _ = read_nvol(ctx.config.inputs["histology_labels"])
    vol = VoxelVolume(data, (1.0, 1.0, 1.0))
    sections = [unstack(vol, k) for k in range(vol.shape[2])]
    target = load_volume(ctx.root / "preprocess-reference" / "reference.nvol").geometry
    ppm = 1.0 / hs.pixels_per_mm
    out = replay_stack(sections, IMAGE_SPACING, load_2d_chains(ctx, len(sections)), hs.thickness, (ppm, ppm),
                       target, load_3d_chain(ctx), method="nearest")
    return VoxelVolume.from_geometry(out, target)


def reference_labels(ctx: Context, target) -> VoxelVolume:
    labels = load_volume(ctx.config.inputs["labels"])
    if tuple(labels.geometry.shape) == tuple(target.shape) and np.allclose(labels.spacing, target.spacing) \
            and np.allclose(labels.origin, target.origin):
        return labels
    return apply_transform(labels, [AffineTransform.identity(3)], target, method="nearest")


def stage_evaluate(ctx: Context) -> list:
    ev = ctx.config.evaluation_params()
    reg = registered_labels(ctx)
    ref = reference_labels(ctx, reg.geometry)
    structures = ev["structures"] or {f"label_{int(v)}": int(v) for v in np.unique(reg.data) if v > 0}
    field = DeformationField.load(ctx.root / "register-3d" / f"{CHAIN_3D}_0.nvol")
    report = evaluate_structures(ref, reg, structures, ref.spacing, int(ev["k"]), float(ev["p"]), field,
                                 ctx.config.seed)
    d = ctx.dir("evaluate")
    (d / "report.txt").write_text(report.to_table() + "\n")
    return [report.save(d / "report.json"), d / "report.txt", save_volume(reg, d / "registered_labels.nvol")]


# ---------------------------------------------------------------- graph


@dataclass(frozen=True)
class Stage:
    name: str
    run: Callable
    deps: tuple = ()
    config_inputs: tuple = ()
    params: Callable = lambda cfg: {}
    enabled: Callable = lambda cfg: True


def _resolved(params) -> dict:
    """Typed parameter object as a plain dict, so changed code defaults invalidate the cache."""
    return asdict(params) if params is not None else {}


def _seg_params(cfg):
    return {"segmentation": _resolved(cfg.segmentation_options()), "seed": cfg.seed}


def _reg2d_params(cfg):
    return {"registration_2d": _resolved(cfg.registration_2d_params()), "diffeo": _resolved(cfg.diffeo_2d()),
            "seed": cfg.seed}


STAGES = (
    Stage("segment-blockface", stage_segment_blockface, (), ("blockface",), _seg_params),
    Stage("segment-histology", stage_segment_histology, (), ("histology",), _seg_params),
    Stage("register-2d", stage_register_2d, ("segment-blockface", "segment-histology"), ("blockface", "histology"),
          _reg2d_params),
    Stage("stack", stage_stack, ("register-2d",), ("blockface", "histology"), lambda c: {"stack": c.stack}),
    Stage("intensity", stage_intensity, ("stack",), (), lambda c: {"intensity": _resolved(c.intensity_params())}),
    Stage("preprocess-reference", stage_preprocess_reference, (), ("reference",),
          lambda c: {"preproc": _resolved(c.preproc_params())}),
    Stage("coarse-align", stage_coarse_align, ("intensity", "preprocess-reference"), (),
          lambda c: {"coarse_align": _resolved(c.coarse_align_params()), "seed": c.seed}),
    Stage("register-3d", stage_register_3d, ("coarse-align",), (),
          lambda c: {"registration_3d": _resolved(c.registration_3d_params()), "seed": c.seed}),
    Stage("reconstruct", stage_reconstruct, ("register-3d",), ("histology",), lambda c: {},
          lambda c: c.color),
    Stage("evaluate", stage_evaluate, ("register-3d",), ("labels", "histology_labels", "histology"),
          lambda c: {"evaluation": c.evaluation_params(), "seed": c.seed},
          lambda c: "labels" in c.inputs and "histology_labels" in c.inputs),
)
STAGE_NAMES = tuple(s.name for s in STAGES)
BY_NAME = {s.name: s for s in STAGES}
