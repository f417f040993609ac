"""Cached, resumable orchestration of the full reconstruction pipeline."""

from .config import PipelineConfig, load_config, read_config_file, validate_config
from .manifest import PipelineManifest, StageRecord, hash_file, hash_inputs, hash_params
from .runner import run_pipeline, run_stage
from .stages import STAGE_NAMES, load_2d_chains, load_3d_chain, load_series, registered_labels, tissue_gray

__all__ = [
    "PipelineConfig", "load_config", "read_config_file", "validate_config", "PipelineManifest", "StageRecord",
    "hash_file", "hash_inputs", "hash_params", "run_pipeline", "run_stage", "STAGE_NAMES", "load_2d_chains",
    "load_3d_chain", "load_series", "registered_labels", "tissue_gray",
]
