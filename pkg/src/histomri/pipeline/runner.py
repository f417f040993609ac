"""Stage scheduling with content-hash caching."""

from __future__ import annotations

import logging
import shutil
import threading
import time
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from pathlib import Path

from ..errors import ConfigInvalid, MissingUpstream, StageFailure
from .config import PipelineConfig, load_config
from .manifest import PipelineManifest, hash_inputs, hash_params
from .stages import BY_NAME, STAGES, Context, Stage

logger = logging.getLogger(__name__)

DONE = ("done", "cached")
STAGE_VERSION = 2


def _as_config(config) -> PipelineConfig:
    if isinstance(config, PipelineConfig):
        return config
    if isinstance(config, (str, Path)):
        return load_config(config)
    raise ConfigInvalid(f"expected a PipelineConfig or a config path, got {type(config).__name__}")


def _stage_files(root: Path, name: str) -> list[Path]:
    d = root / name
    return sorted(p for p in d.rglob("*") if p.is_file()) if d.is_dir() else []


def _input_files(ctx: Context, stage: Stage, manifest: PipelineManifest) -> list[Path]:
    files: list[Path] = []
    for key in stage.config_inputs:
        if key in ("histology", "blockface"):
            files.extend(ctx.series(key).files)
        elif key in ctx.config.inputs:
            files.append(Path(ctx.config.inputs[key]))
    for dep in stage.deps:
        rec = manifest.stages.get(dep)
        if rec is not None:
            files.extend(ctx.root / o for o in rec.outputs)
    return files


def _missing_upstream(ctx: Context, stage: Stage, manifest: PipelineManifest) -> list[str]:
    missing = []
    for dep in stage.deps:
        rec = manifest.stages.get(dep)
        if rec is None or rec.status not in DONE or not all((ctx.root / o).exists() for o in rec.outputs):
            missing.append(dep)
    return missing


def _execute(ctx: Context, stage: Stage, manifest: PipelineManifest, lock: threading.Lock) -> str:
    """Run one stage unless its cache entry is fresh; returns the final status."""
    cfg = ctx.config
    with lock:
        rec = manifest.record(stage.name)
        if not stage.enabled(cfg):
            rec.status, rec.outputs, rec.error = "skipped", [], None
            manifest.save()
            return "skipped"
        missing = _missing_upstream(ctx, stage, manifest)
        if missing:
            raise MissingUpstream(stage.name, missing)
        inputs = _input_files(ctx, stage, manifest)
    start = time.perf_counter()
    hashes = hash_inputs(inputs, ctx.root)
    phash = hash_params({"stage": stage.name, "version": STAGE_VERSION, "params": stage.params(cfg)})
    with lock:
        if manifest.is_fresh(stage.name, hashes, phash, ctx.root):
            rec.status = "cached"
            rec.wall_time = time.perf_counter() - start
            manifest.save()
            logger.info("%s: cached", stage.name)
            return "cached"
        rec.status, rec.error = "running", None
        manifest.save()
    out_dir = ctx.root / stage.name
    if out_dir.exists():
        shutil.rmtree(out_dir)
    logger.info("%s: running", stage.name)
    try:
        stage.run(ctx)
    except Exception as exc:
        with lock:
            rec.status, rec.error = "failed", f"{type(exc).__name__}: {exc}"
            rec.wall_time = time.perf_counter() - start
            manifest.save()
        raise StageFailure(stage.name, exc) from exc
    with lock:
        rec.status = "done"
        rec.input_hashes, rec.params_hash = hashes, phash
        rec.outputs = [ctx.rel(p) for p in _stage_files(ctx.root, stage.name)]
        rec.wall_time = time.perf_counter() - start
        manifest.save()
    logger.info("%s: done in %.1f s", stage.name, rec.wall_time)
    return "done"


def _open(cfg: PipelineConfig) -> tuple[Context, PipelineManifest]:
    ctx = Context(cfg)
    ctx.root.mkdir(parents=True, exist_ok=True)
    manifest = PipelineManifest.load(ctx.root)
    manifest.config = cfg.to_dict()
    return ctx, manifest


def run_pipeline(config) -> PipelineManifest:
    """Run every stage in dependency order, reusing cached results.

    With ``threads > 1`` independent stages (the histology and reference
    branches) run concurrently; outputs do not depend on the thread count.

    Raises
    ------
    ConfigInvalid
        The config does not validate (raised before any work).
    StageFailure
        A stage raised; the manifest keeps the progress made so far.
    """
    cfg = _as_config(config)
    ctx, manifest = _open(cfg)
    lock = threading.Lock()
    pending = {s.name: s for s in STAGES}
    finished: set[str] = set()
    if cfg.threads <= 1:
        for stage in STAGES:
            _execute(ctx, stage, manifest, lock)
        return manifest
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        running: dict = {}
        while pending or running:
            for name in [n for n, s in pending.items() if set(s.deps) <= finished]:
                running[pool.submit(_execute, ctx, pending.pop(name), manifest, lock)] = name
            done, _ = wait(running, return_when=FIRST_COMPLETED)
            for fut in done:
                name = running.pop(fut)
                try:
                    fut.result()
                except BaseException:
                    for other in running:
                        other.cancel()
                    wait(running)
                    raise
                finished.add(name)
    return manifest


def run_stage(name: str, config) -> list[Path]:
    """Run exactly one stage (cached like in :func:`run_pipeline`) and return its output files.

    Raises
    ------
    MissingUpstream
        An upstream stage has not produced its outputs yet.
    """
    if name not in BY_NAME:
        raise ConfigInvalid(f"unknown stage {name!r}; choose from {', '.join(BY_NAME)}")
    cfg = _as_config(config)
    ctx, manifest = _open(cfg)
    _execute(ctx, BY_NAME[name], manifest, threading.Lock())
    return [ctx.root / o for o in manifest.stages[name].outputs]
